#pragma once

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/matrix.hpp"
#include "proxkit/optim.hpp"
#include "proxkit/prox_lstm.hpp"
#include "proxkit/rng.hpp"
#include "proxkit/tape.hpp"

namespace proxkit {

struct LabeledSequence {
    std::vector<DenseMatrix> steps;  // each input x 1
    std::size_t label = 0;
};

struct SequenceModel {
    LstmParams cell;
    DenseMatrix w_out;  // classes x hidden
    DenseMatrix b_out;  // classes x 1

    static SequenceModel init(std::size_t hidden, std::size_t input, std::size_t classes, SplitMix64& rng) {
        SequenceModel m;
        m.cell = LstmParams::init(hidden, input, rng);
        m.w_out = rng.normal_matrix(classes, hidden, 0.2);
        m.b_out = DenseMatrix(classes, 1);
        return m;
    }

    std::vector<DenseMatrix*> all_params() {
        std::vector<DenseMatrix*> ps = cell.all();
        ps.push_back(&w_out);
        ps.push_back(&b_out);
        return ps;
    }
};

struct SequenceTrainConfig {
    double rho = 1.0;              // delta^2 / lambda for the prox phase
    double lr = 1e-3;              // Appendix-G fine-tuning defaults
    double weight_decay = 1e-4;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t vanilla_epochs = 200;
    std::size_t prox_epochs = 50;
    double plateau_tol = 1e-5;     // loss change over plateau_window epochs
    std::size_t plateau_window = 10;
    std::uint64_t shuffle_seed = 7;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::string phase;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct SequenceTrainResult {
    std::vector<EpochRecord> epochs;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
};

namespace detail {

// Loss and gradients for one sequence, routed through a tape so the cell's
// hand-derived BPTT enters as a custom node.
inline double sequence_loss_and_grads(SequenceModel& model, const LabeledSequence& seq, double rho,
                                      std::vector<DenseMatrix>& grad_accum) {
    Tape tape;
    LstmParamVars pv = LstmParamVars::create(tape, model.cell);
    Var w_out = tape.leaf(model.w_out);
    Var b_out = tape.leaf(model.b_out);
    Var h_last = prox_lstm_node(tape, pv, model.cell, seq.steps, rho);
    Var logits = add(matmul(w_out, h_last), b_out);
    Var loss = cross_entropy_loss(logits, {seq.label});
    const double value = loss.value()(0, 0);
    tape.backward(loss);
    std::size_t k = 0;
    for (const Var& v : pv.vars) {
        const DenseMatrix& g = v.grad();
        for (std::size_t i = 0; i < g.size(); ++i) grad_accum[k].data()[i] += g.data()[i];
        ++k;
    }
    for (const Var& v : {w_out, b_out}) {
        const DenseMatrix& g = v.grad();
        for (std::size_t i = 0; i < g.size(); ++i) grad_accum[k].data()[i] += g.data()[i];
        ++k;
    }
    return value;
}

inline std::size_t predict(const SequenceModel& model, const LabeledSequence& seq, double rho) {
    const std::vector<ProxLstmStepCache> caches = prox_lstm_forward(model.cell, seq.steps, rho);
    const DenseMatrix logits = add(matmul(model.w_out, caches.back().h), model.b_out);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.rows(); ++i)
        if (logits(i, 0) > logits(best, 0)) best = i;
    return best;
}

}  // namespace detail

inline double evaluate_accuracy(const SequenceModel& model, const std::vector<LabeledSequence>& data, double rho) {
    if (data.empty()) throw std::invalid_argument("evaluate_accuracy: empty dataset");
    std::size_t hits = 0;
    for (const LabeledSequence& seq : data)
        if (detail::predict(model, seq, rho) == seq.label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// One training phase at a fixed rho. Mini-batches are drawn in a
// seed-determined order; gradients are summed in that fixed order.
inline std::vector<EpochRecord> train_phase(SequenceModel& model, const std::vector<LabeledSequence>& train,
                                            const SequenceTrainConfig& cfg, double rho, std::size_t max_epochs,
                                            const char* phase_name, SplitMix64& shuffle_rng,
                                            std::size_t epoch_offset) {
    std::vector<EpochRecord> records;
    std::vector<DenseMatrix*> params = model.all_params();
    MomentumSgd opt(params, cfg.lr, cfg.momentum, cfg.weight_decay);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> recent;
    for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::vector<DenseMatrix> grads;
            for (DenseMatrix* p : params) grads.emplace_back(p->rows(), p->cols());
            for (std::size_t k = start; k < end; ++k) {
                const LabeledSequence& seq = train[order[k]];
                const double l = detail::sequence_loss_and_grads(model, seq, rho, grads);
                if (!std::isfinite(l)) {
                    throw NumericalError(std::string(phase_name) + ": NaN loss at epoch " + std::to_string(epoch) +
                                         ", sequence " + std::to_string(k));
                }
                total_loss += l;
                if (detail::predict(model, seq, rho) == seq.label) ++correct;
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            std::vector<const DenseMatrix*> gptrs;
            for (DenseMatrix& g : grads) {
                for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= inv;
                gptrs.push_back(&g);
            }
            opt.step(gptrs);
        }
        EpochRecord rec;
        rec.epoch = epoch_offset + records.size();
        rec.phase = phase_name;
        rec.loss = total_loss / static_cast<double>(train.size());
        rec.accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        records.push_back(rec);

        recent.push_back(rec.loss);
        if (recent.size() > cfg.plateau_window) {
            const double drop = recent[recent.size() - cfg.plateau_window - 1] - rec.loss;
            if (std::abs(drop) < cfg.plateau_tol) break;
        }
    }
    return records;
}

// Warm-start protocol: a vanilla phase (rho = 0) to convergence or plateau,
// then a prox phase continuing from the same weights.
inline SequenceTrainResult train_sequence_classifier(SequenceModel& model, const std::vector<LabeledSequence>& train,
                                                     const SequenceTrainConfig& cfg) {
    if (train.empty()) throw std::invalid_argument("train_sequence_classifier: empty dataset");
    SplitMix64 shuffle_rng(cfg.shuffle_seed);
    SequenceTrainResult result;
    result.epochs = train_phase(model, train, cfg, 0.0, cfg.vanilla_epochs, "vanilla", shuffle_rng, 0);
    std::vector<EpochRecord> prox =
        train_phase(model, train, cfg, cfg.rho, cfg.prox_epochs, "prox", shuffle_rng, result.epochs.size());
    result.epochs.insert(result.epochs.end(), prox.begin(), prox.end());
    result.final_loss = result.epochs.back().loss;
    result.final_accuracy = result.epochs.back().accuracy;
    return result;
}

}  // namespace proxkit

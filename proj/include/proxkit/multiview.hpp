#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "proxkit/matrix.hpp"
#include "proxkit/optim.hpp"
#include "proxkit/prox_cca.hpp"
#include "proxkit/rng.hpp"
#include "proxkit/tape.hpp"

namespace proxkit {

// One tanh-hidden-layer feature extractor: features = w2 tanh(w1 x + b1) + b2.
struct MlpTower {
    DenseMatrix w1, b1, w2, b2;

    static MlpTower init(std::size_t in, std::size_t hidden, std::size_t out, SplitMix64& rng) {
        MlpTower t;
        t.w1 = rng.normal_matrix(hidden, in, 1.0 / std::sqrt(double(in)));
        t.b1 = DenseMatrix(hidden, 1);
        t.w2 = rng.normal_matrix(out, hidden, 1.0 / std::sqrt(double(hidden)));
        t.b2 = DenseMatrix(out, 1);
        return t;
    }

    std::vector<DenseMatrix*> all() { return {&w1, &b1, &w2, &b2}; }
};

struct MultiviewModel {
    MlpTower f;           // x-view tower
    MlpTower g;           // y-view tower
    DenseMatrix w_head;   // classes x d, shared between views
    DenseMatrix b_head;

    static MultiviewModel init(std::size_t in_x, std::size_t in_y, std::size_t hidden, std::size_t d,
                               std::size_t classes, SplitMix64& rng) {
        MultiviewModel m;
        m.f = MlpTower::init(in_x, hidden, d, rng);
        m.g = MlpTower::init(in_y, hidden, d, rng);
        m.w_head = rng.normal_matrix(classes, d, 1.0 / std::sqrt(double(d)));
        m.b_head = DenseMatrix(classes, 1);
        return m;
    }

    std::vector<DenseMatrix*> all_params() {
        std::vector<DenseMatrix*> ps = f.all();
        for (DenseMatrix* p : g.all()) ps.push_back(p);
        ps.push_back(&w_head);
        ps.push_back(&b_head);
        return ps;
    }
};

struct TowerVars {
    Var w1, b1, w2, b2;

    static TowerVars create(Tape& tape, const MlpTower& t) {
        return {tape.leaf(t.w1), tape.leaf(t.b1), tape.leaf(t.w2), tape.leaf(t.b2)};
    }

    std::vector<Var> list() const { return {w1, b1, w2, b2}; }
};

struct MultiviewVars {
    TowerVars f, g;
    Var w_head, b_head;

    static MultiviewVars create(Tape& tape, const MultiviewModel& m) {
        MultiviewVars v{TowerVars::create(tape, m.f), TowerVars::create(tape, m.g), tape.leaf(m.w_head),
                        tape.leaf(m.b_head)};
        return v;
    }

    std::vector<Var> list() const {
        std::vector<Var> vs = f.list();
        for (Var v : g.list()) vs.push_back(v);
        vs.push_back(w_head);
        vs.push_back(b_head);
        return vs;
    }
};

inline Var tower_forward(Tape&, const TowerVars& tv, Var input) {
    Var hidden = tanh(add_bias(matmul(tv.w1, input), tv.b1));
    return add_bias(matmul(tv.w2, hidden), tv.b2);
}

struct MultiviewLogits {
    Var logits_x;
    Var logits_y;
    Var averaged;
    bool prox_applied = false;
};

// Full pipeline: towers, centering, prox-CCA layer (bypassed once lambda has
// faded past the threshold), shared head, averaged logits.
inline MultiviewLogits multiview_forward(Tape& tape, const MultiviewVars& vars, const CcaProxLayer& layer,
                                         Var x_batch, Var y_batch, double lambda) {
    Var fx = center_cols(tower_forward(tape, vars.f, x_batch));
    Var gy = center_cols(tower_forward(tape, vars.g, y_batch));
    MultiviewLogits out;
    Var p = fx, q = gy;
    if (lambda < layer.fade_threshold) {
        const std::size_t d = fx.value().rows();
        Var stacked = prox_cca_node(tape, layer, fx, gy, lambda);
        p = center_cols(rows(stacked, 0, d));
        q = center_cols(rows(stacked, d, 2 * d));
        out.prox_applied = true;
    }
    out.logits_x = add_bias(matmul(vars.w_head, p), vars.b_head);
    out.logits_y = add_bias(matmul(vars.w_head, q), vars.b_head);
    out.averaged = scale(add(out.logits_x, out.logits_y), 0.5);
    return out;
}

struct MultiviewEpochRecord {
    std::size_t epoch = 0;
    double lambda = 0.0;
    double loss = 0.0;
    double accuracy = 0.0;
    double correlation = 0.0;  // -L(X, Y) averaged over batches
};

struct MultiviewTrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 100;
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t shuffle_seed = 11;
};

// Mini-batch training with the adaptive lambda_t = (1 + k t) alpha_0
// schedule. A degenerate T spectrum inside a batch triggers one jittered
// retry (1e-8 noise) before the failure propagates; the jitter belongs to the
// training loop, not the math core.
inline std::vector<MultiviewEpochRecord> train_multiview(MultiviewModel& model, const CcaProxLayer& layer,
                                                         const DenseMatrix& x, const DenseMatrix& y,
                                                         const std::vector<std::size_t>& labels,
                                                         const MultiviewTrainConfig& cfg) {
    const std::size_t n = x.cols();
    if (labels.size() != n || y.cols() != n) throw std::invalid_argument("train_multiview: sample count mismatch");
    if (cfg.batch_size < 2) throw std::invalid_argument("train_multiview: batch size too small");

    std::vector<MultiviewEpochRecord> records;
    std::vector<DenseMatrix*> params = model.all_params();
    MomentumSgd opt(params, cfg.lr, cfg.momentum, cfg.weight_decay);
    SplitMix64 shuffle_rng(cfg.shuffle_seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lambda = lambda_schedule(layer.k_sched, layer.alpha0, epoch);
        shuffle_rng.shuffle(order);
        double total_loss = 0.0, total_corr = 0.0;
        std::size_t correct = 0, batches = 0;
        for (std::size_t start = 0; start + 1 < n; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            const std::size_t bs = end - start;
            DenseMatrix xb(x.rows(), bs), yb(y.rows(), bs);
            std::vector<std::size_t> lb(bs);
            for (std::size_t j = 0; j < bs; ++j) {
                const std::size_t src = order[start + j];
                for (std::size_t r = 0; r < x.rows(); ++r) xb(r, j) = x(r, src);
                for (std::size_t r = 0; r < y.rows(); ++r) yb(r, j) = y(r, src);
                lb[j] = labels[src];
            }

            auto run_batch = [&](const DenseMatrix& xin, const DenseMatrix& yin) {
                Tape tape;
                MultiviewVars vars = MultiviewVars::create(tape, model);
                Var xv = tape.leaf(xin);
                Var yv = tape.leaf(yin);
                MultiviewLogits logits = multiview_forward(tape, vars, layer, xv, yv, lambda);
                Var loss = cross_entropy_loss(logits.averaged, lb);
                const double loss_val = loss.value()(0, 0);
                const DenseMatrix avg = logits.averaged.value();
                tape.backward(loss);
                std::vector<const DenseMatrix*> grads;
                for (Var v : vars.list()) grads.push_back(&v.grad());
                opt.step(grads);
                return std::make_pair(loss_val, avg);
            };

            std::pair<double, DenseMatrix> batch_out;
            try {
                batch_out = run_batch(xb, yb);
            } catch (const DegenerateSpectrum&) {
                SplitMix64 jitter(epoch * 1000003 + start);
                DenseMatrix xj = xb, yj = yb;
                for (std::size_t i = 0; i < xj.size(); ++i) {
                    xj.data()[i] += 1e-8 * jitter.next_normal();
                    yj.data()[i] += 1e-8 * jitter.next_normal();
                }
                batch_out = run_batch(xj, yj);
            }
            total_loss += batch_out.first * static_cast<double>(bs);
            for (std::size_t j = 0; j < bs; ++j) {
                std::size_t best = 0;
                for (std::size_t r = 1; r < batch_out.second.rows(); ++r)
                    if (batch_out.second(r, j) > batch_out.second(best, j)) best = r;
                if (best == lb[j]) ++correct;
            }
            {
                // Track the correlation the towers currently achieve.
                Tape tape;
                MultiviewVars vars = MultiviewVars::create(tape, model);
                Var fx = center_cols(tower_forward(tape, vars.f, tape.leaf(xb)));
                Var gy = center_cols(tower_forward(tape, vars.g, tape.leaf(yb)));
                total_corr += -cca_objective(fx.value(), gy.value(), layer.eps, layer.k).value;
            }
            ++batches;
        }
        MultiviewEpochRecord rec;
        rec.epoch = epoch;
        rec.lambda = lambda;
        rec.loss = total_loss / static_cast<double>(n);
        rec.accuracy = static_cast<double>(correct) / static_cast<double>(n);
        rec.correlation = batches > 0 ? total_corr / static_cast<double>(batches) : 0.0;
        records.push_back(rec);
    }
    return records;
}

}  // namespace proxkit

#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/linalg.hpp"
#include "proxkit/matrix.hpp"
#include "proxkit/rng.hpp"
#include "proxkit/tape.hpp"

namespace proxkit {

// Gate weights of one LSTM cell. w_*: hidden x input, u_*: hidden x hidden,
// b_*: hidden x 1, for the input/forget/output/candidate gates.
struct LstmParams {
    DenseMatrix wi, ui, bi;
    DenseMatrix wf, uf, bf;
    DenseMatrix wo, uo, bo;
    DenseMatrix wg, ug, bg;

    static LstmParams init(std::size_t hidden, std::size_t input, SplitMix64& rng, double stddev = 0.2) {
        LstmParams p;
        auto w = [&] { return rng.normal_matrix(hidden, input, stddev); };
        auto u = [&] { return rng.normal_matrix(hidden, hidden, stddev); };
        auto b = [&] { return DenseMatrix(hidden, 1); };
        p.wi = w(); p.ui = u(); p.bi = b();
        p.wf = w(); p.uf = u(); p.bf = b();
        p.wo = w(); p.uo = u(); p.bo = b();
        p.wg = w(); p.ug = u(); p.bg = b();
        return p;
    }

    std::size_t hidden() const { return wi.rows(); }
    std::size_t input() const { return wi.cols(); }

    std::vector<DenseMatrix*> all() {
        return {&wi, &ui, &bi, &wf, &uf, &bf, &wo, &uo, &bo, &wg, &ug, &bg};
    }
    std::vector<const DenseMatrix*> all() const {
        return {&wi, &ui, &bi, &wf, &uf, &bf, &wo, &uo, &bo, &wg, &ug, &bg};
    }
};

struct LstmGates {
    DenseMatrix i, f, o, g;  // activations, hidden x 1
};

// Everything the backward pass needs from one forward step.
struct ProxLstmStepCache {
    DenseMatrix x, c_prev, h_prev;
    LstmGates gates;
    DenseMatrix s;      // pre-prox state
    DenseMatrix g_jac;  // G_t = d s_t / d x_t, hidden x input
    DenseMatrix c, h;
    double rho = 0.0;   // delta^2 / lambda
};

namespace detail {

inline DenseMatrix gate_preact(const DenseMatrix& w, const DenseMatrix& u, const DenseMatrix& b,
                               const DenseMatrix& x, const DenseMatrix& h_prev) {
    const std::size_t hd = w.rows();
    DenseMatrix a(hd, 1);
    for (std::size_t r = 0; r < hd; ++r) {
        double acc = b(r, 0);
        const double* wr = w.row_ptr(r);
        for (std::size_t k = 0; k < w.cols(); ++k) acc += wr[k] * x(k, 0);
        const double* ur = u.row_ptr(r);
        for (std::size_t k = 0; k < u.cols(); ++k) acc += ur[k] * h_prev(k, 0);
        a(r, 0) = acc;
    }
    return a;
}

inline void sigmoid_inplace(DenseMatrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = 1.0 / (1.0 + std::exp(-m.data()[i]));
}

inline void tanh_inplace(DenseMatrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = std::tanh(m.data()[i]);
}

}  // namespace detail

// Standard gate equations, producing the pre-prox state
// s_t = f . c_prev + i . tanh-candidate.
inline std::pair<DenseMatrix, LstmGates> lstm_step(const LstmParams& p, const DenseMatrix& c_prev,
                                                   const DenseMatrix& h_prev, const DenseMatrix& x) {
    const std::size_t hd = p.hidden();
    if (x.rows() != p.input() || x.cols() != 1 || c_prev.rows() != hd || h_prev.rows() != hd) {
        throw std::invalid_argument("lstm_step: shape mismatch, x " + shape_str(x) + ", c " + shape_str(c_prev) +
                                    ", h " + shape_str(h_prev) + " for hidden=" + std::to_string(hd) +
                                    " input=" + std::to_string(p.input()));
    }
    LstmGates gates;
    gates.i = detail::gate_preact(p.wi, p.ui, p.bi, x, h_prev);
    gates.f = detail::gate_preact(p.wf, p.uf, p.bf, x, h_prev);
    gates.o = detail::gate_preact(p.wo, p.uo, p.bo, x, h_prev);
    gates.g = detail::gate_preact(p.wg, p.ug, p.bg, x, h_prev);
    detail::sigmoid_inplace(gates.i);
    detail::sigmoid_inplace(gates.f);
    detail::sigmoid_inplace(gates.o);
    detail::tanh_inplace(gates.g);
    DenseMatrix s(hd, 1);
    for (std::size_t r = 0; r < hd; ++r) s(r, 0) = gates.f(r, 0) * c_prev(r, 0) + gates.i(r, 0) * gates.g(r, 0);
    return {std::move(s), std::move(gates)};
}

// Analytic Jacobian G_t = d s_t / d x_t. Row r of G is
// c_prev_r f_r(1-f_r) wf_r + g_r i_r(1-i_r) wi_r + i_r (1-g_r^2) wg_r.
inline DenseMatrix input_jacobian(const LstmParams& p, const LstmGates& gates, const DenseMatrix& c_prev) {
    const std::size_t hd = p.hidden(), in = p.input();
    DenseMatrix g_jac(hd, in);
    for (std::size_t r = 0; r < hd; ++r) {
        const double df = c_prev(r, 0) * gates.f(r, 0) * (1.0 - gates.f(r, 0));
        const double di = gates.g(r, 0) * gates.i(r, 0) * (1.0 - gates.i(r, 0));
        const double dg = gates.i(r, 0) * (1.0 - gates.g(r, 0) * gates.g(r, 0));
        for (std::size_t c = 0; c < in; ++c) {
            g_jac(r, c) = df * p.wf(r, c) + di * p.wi(r, c) + dg * p.wg(r, c);
        }
    }
    return g_jac;
}

// Robustness prox: c = (I + rho G G^T)^{-1} s with rho = delta^2 / lambda.
// rho = 0 returns s itself, bitwise.
inline DenseMatrix prox_step_rho(const DenseMatrix& s, const DenseMatrix& g_jac, double rho) {
    if (rho < 0.0) throw std::invalid_argument("prox_step: rho must be nonnegative");
    if (!g_jac.all_finite()) throw NumericalError("prox_step: non-finite input Jacobian");
    if (rho == 0.0) return s;
    const std::size_t hd = s.rows();
    DenseMatrix m = matmul(g_jac, transpose(g_jac));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= rho;
    for (std::size_t i = 0; i < hd; ++i) m(i, i) += 1.0;
    return solve_spd(m, s);
}

inline DenseMatrix prox_step(const DenseMatrix& s, const DenseMatrix& g_jac, double lambda, double delta) {
    if (lambda <= 0.0) throw std::invalid_argument("prox_step: lambda must be positive");
    if (delta < 0.0) throw std::invalid_argument("prox_step: delta must be nonnegative");
    return prox_step_rho(s, g_jac, delta * delta / lambda);
}

// Adjoints of the prox solve. With M = I + rho G G^T and a = M^{-1} dJ/dc:
//   dJ/ds = a,
//   dJ/dG = -rho (a c^T + c a^T) G.
inline std::pair<DenseMatrix, DenseMatrix> prox_step_backward(const ProxLstmStepCache& cache,
                                                              const DenseMatrix& dj_dc) {
    const std::size_t hd = cache.s.rows();
    if (dj_dc.rows() != hd || dj_dc.cols() != 1) {
        throw std::invalid_argument("prox_step_backward: adjoint shape " + shape_str(dj_dc));
    }
    if (cache.rho == 0.0) {
        return {dj_dc, DenseMatrix(cache.g_jac.rows(), cache.g_jac.cols())};
    }
    DenseMatrix m = matmul(cache.g_jac, transpose(cache.g_jac));
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= cache.rho;
    for (std::size_t i = 0; i < hd; ++i) m(i, i) += 1.0;
    const DenseMatrix a = solve_spd(m, dj_dc);
    // outer = a c^T + c a^T
    DenseMatrix outer(hd, hd);
    for (std::size_t i = 0; i < hd; ++i)
        for (std::size_t j = 0; j < hd; ++j)
            outer(i, j) = a(i, 0) * cache.c(j, 0) + cache.c(i, 0) * a(j, 0);
    DenseMatrix dj_dg = matmul(outer, cache.g_jac);
    for (std::size_t i = 0; i < dj_dg.size(); ++i) dj_dg.data()[i] *= -cache.rho;
    return {a, std::move(dj_dg)};
}

// One full forward step: gates, s_t, G_t, prox, output.
inline ProxLstmStepCache prox_lstm_forward_step(const LstmParams& p, const DenseMatrix& c_prev,
                                                const DenseMatrix& h_prev, const DenseMatrix& x, double rho) {
    ProxLstmStepCache cache;
    cache.x = x;
    cache.c_prev = c_prev;
    cache.h_prev = h_prev;
    cache.rho = rho;
    auto [s, gates] = lstm_step(p, c_prev, h_prev, x);
    cache.gates = std::move(gates);
    cache.g_jac = input_jacobian(p, cache.gates, c_prev);
    cache.c = prox_step_rho(s, cache.g_jac, rho);
    cache.s = std::move(s);
    const std::size_t hd = p.hidden();
    cache.h = DenseMatrix(hd, 1);
    for (std::size_t r = 0; r < hd; ++r) cache.h(r, 0) = cache.gates.o(r, 0) * std::tanh(cache.c(r, 0));
    return cache;
}

inline std::vector<ProxLstmStepCache> prox_lstm_forward(const LstmParams& p, const std::vector<DenseMatrix>& xs,
                                                        double rho) {
    if (xs.empty()) throw std::invalid_argument("prox_lstm_forward: empty sequence");
    std::vector<ProxLstmStepCache> caches;
    caches.reserve(xs.size());
    DenseMatrix c(p.hidden(), 1), h(p.hidden(), 1);
    for (const DenseMatrix& x : xs) {
        caches.push_back(prox_lstm_forward_step(p, c, h, x, rho));
        c = caches.back().c;
        h = caches.back().h;
    }
    return caches;
}

// Adjoints contributed by the scalar S = <dir, G_t> when G_t is seen as a
// function of the gate pre-activations, c_prev, and the gate weights that
// appear in it directly. These are the directional second-order terms of the
// backward recursions.
struct JacobianDirectionAdjoints {
    DenseMatrix dai, daf, dag;  // gate pre-activation adjoints, hidden x 1
    DenseMatrix dc_prev;        // hidden x 1
    DenseMatrix dwi, dwf, dwg;  // direct weight contributions, hidden x input
};

inline JacobianDirectionAdjoints jacobian_direction_adjoints(const LstmParams& p, const LstmGates& gates,
                                                             const DenseMatrix& c_prev, const DenseMatrix& dir) {
    const std::size_t hd = p.hidden(), in = p.input();
    JacobianDirectionAdjoints out{DenseMatrix(hd, 1), DenseMatrix(hd, 1), DenseMatrix(hd, 1),
                                  DenseMatrix(hd, 1), DenseMatrix(hd, in), DenseMatrix(hd, in),
                                  DenseMatrix(hd, in)};
    for (std::size_t r = 0; r < hd; ++r) {
        double rf = 0.0, ri = 0.0, rg = 0.0;
        for (std::size_t c = 0; c < in; ++c) {
            rf += dir(r, c) * p.wf(r, c);
            ri += dir(r, c) * p.wi(r, c);
            rg += dir(r, c) * p.wg(r, c);
        }
        const double iv = gates.i(r, 0), fv = gates.f(r, 0), gv = gates.g(r, 0);
        out.daf(r, 0) = rf * c_prev(r, 0) * (1.0 - 2.0 * fv) * fv * (1.0 - fv);
        out.dai(r, 0) = (ri * gv * (1.0 - 2.0 * iv) + rg * (1.0 - gv * gv)) * iv * (1.0 - iv);
        out.dag(r, 0) = (ri * iv * (1.0 - iv) - 2.0 * rg * iv * gv) * (1.0 - gv * gv);
        out.dc_prev(r, 0) = rf * fv * (1.0 - fv);
        const double sf = c_prev(r, 0) * fv * (1.0 - fv);
        const double si = gv * iv * (1.0 - iv);
        const double sg = iv * (1.0 - gv * gv);
        for (std::size_t c = 0; c < in; ++c) {
            out.dwf(r, c) = dir(r, c) * sf;
            out.dwi(r, c) = dir(r, c) * si;
            out.dwg(r, c) = dir(r, c) * sg;
        }
    }
    return out;
}

// Gradients with respect to every cell parameter, plus the optional input
// adjoints (one per step).
struct LstmGrads {
    LstmParams by_param;  // same shapes, holding gradients
    std::vector<DenseMatrix> dx;

    explicit LstmGrads(const LstmParams& like, std::size_t steps) : dx(steps) {
        by_param = like;
        for (DenseMatrix* m : by_param.all())
            for (std::size_t i = 0; i < m->size(); ++i) m->data()[i] = 0.0;
        for (std::size_t t = 0; t < steps; ++t) dx[t] = DenseMatrix(like.input(), 1);
    }
};

// Hand-derived backpropagation through time. The prox adjoints feed three
// extra paths beyond a vanilla LSTM: the direct appearance of the gate
// weights inside G_t, the c_prev factor of the forget-gate row scaling, and
// the gate pre-activations that shape G_t (the directional second-order
// terms d/d(.) <dJ/dG_t, d s_t/d x_t>).
inline LstmGrads prox_lstm_backward(const LstmParams& p, const std::vector<ProxLstmStepCache>& caches,
                                    const DenseMatrix& dj_dh_last) {
    if (caches.empty()) throw std::invalid_argument("prox_lstm_backward: empty sequence");
    const std::size_t hd = p.hidden(), in = p.input(), tn = caches.size();
    LstmGrads grads(p, tn);

    DenseMatrix dh = dj_dh_last;            // dJ/dh_t
    DenseMatrix dc_in(hd, 1);               // dJ/dc_t arriving from step t+1
    for (std::size_t t = tn; t-- > 0;) {
        const ProxLstmStepCache& cc = caches[t];

        // Total c_t adjoint: next-step path plus the output h_t = o . tanh(c_t).
        DenseMatrix dc(hd, 1);
        for (std::size_t r = 0; r < hd; ++r) {
            const double th = std::tanh(cc.c(r, 0));
            dc(r, 0) = dc_in(r, 0) + dh(r, 0) * cc.gates.o(r, 0) * (1.0 - th * th);
        }
        auto [ds, dg_jac] = prox_step_backward(cc, dc);

        // Gate-level adjoints from s_t = f . c_prev + i . g and h_t's o factor.
        DenseMatrix dai(hd, 1), daf(hd, 1), dao(hd, 1), dag(hd, 1);
        DenseMatrix dc_prev(hd, 1), dh_prev(hd, 1);
        for (std::size_t r = 0; r < hd; ++r) {
            const double iv = cc.gates.i(r, 0), fv = cc.gates.f(r, 0);
            const double ov = cc.gates.o(r, 0), gv = cc.gates.g(r, 0);
            dai(r, 0) = ds(r, 0) * gv * iv * (1.0 - iv);
            daf(r, 0) = ds(r, 0) * cc.c_prev(r, 0) * fv * (1.0 - fv);
            dao(r, 0) = dh(r, 0) * std::tanh(cc.c(r, 0)) * ov * (1.0 - ov);
            dag(r, 0) = ds(r, 0) * iv * (1.0 - gv * gv);
            dc_prev(r, 0) = ds(r, 0) * fv;
        }

        if (cc.rho != 0.0) {
            // Directional second-order terms d<dJ/dG_t, ds_t/dx_t>/d(.).
            const JacobianDirectionAdjoints so = jacobian_direction_adjoints(p, cc.gates, cc.c_prev, dg_jac);
            for (std::size_t r = 0; r < hd; ++r) {
                dai(r, 0) += so.dai(r, 0);
                daf(r, 0) += so.daf(r, 0);
                dag(r, 0) += so.dag(r, 0);
                dc_prev(r, 0) += so.dc_prev(r, 0);
                for (std::size_t c = 0; c < in; ++c) {
                    grads.by_param.wi(r, c) += so.dwi(r, c);
                    grads.by_param.wf(r, c) += so.dwf(r, c);
                    grads.by_param.wg(r, c) += so.dwg(r, c);
                }
            }
        }

        // Weight, bias, and carried adjoints shared with a vanilla LSTM.
        auto accumulate = [&](const DenseMatrix& da, DenseMatrix& w, DenseMatrix& u, DenseMatrix& b,
                              const DenseMatrix& wp, const DenseMatrix& up) {
            for (std::size_t r = 0; r < hd; ++r) {
                const double dv = da(r, 0);
                if (dv == 0.0) continue;
                for (std::size_t c = 0; c < in; ++c) w(r, c) += dv * cc.x(c, 0);
                for (std::size_t c = 0; c < hd; ++c) u(r, c) += dv * cc.h_prev(c, 0);
                b(r, 0) += dv;
            }
            for (std::size_t c = 0; c < in; ++c) {
                double acc = 0.0;
                for (std::size_t r = 0; r < hd; ++r) acc += wp(r, c) * da(r, 0);
                grads.dx[t](c, 0) += acc;
            }
            for (std::size_t c = 0; c < hd; ++c) {
                double acc = 0.0;
                for (std::size_t r = 0; r < hd; ++r) acc += up(r, c) * da(r, 0);
                dh_prev(c, 0) += acc;
            }
        };
        accumulate(dai, grads.by_param.wi, grads.by_param.ui, grads.by_param.bi, p.wi, p.ui);
        accumulate(daf, grads.by_param.wf, grads.by_param.uf, grads.by_param.bf, p.wf, p.uf);
        accumulate(dao, grads.by_param.wo, grads.by_param.uo, grads.by_param.bo, p.wo, p.uo);
        accumulate(dag, grads.by_param.wg, grads.by_param.ug, grads.by_param.bg, p.wg, p.ug);

        dh = std::move(dh_prev);
        dc_in = std::move(dc_prev);
    }
    return grads;
}

// Full BPTT entry point: the loss sees only the final hidden state.
// `loss` maps h_T to (J, dJ/dh_T).
inline std::pair<double, LstmGrads> bptt(
    const LstmParams& p, const std::vector<DenseMatrix>& xs, double rho,
    const std::function<std::pair<double, DenseMatrix>(const DenseMatrix&)>& loss) {
    if (xs.empty()) throw std::invalid_argument("bptt: sequence length 0");
    const std::vector<ProxLstmStepCache> caches = prox_lstm_forward(p, xs, rho);
    auto [j, dj_dh] = loss(caches.back().h);
    LstmGrads grads = prox_lstm_backward(p, caches, dj_dh);
    return {j, std::move(grads)};
}

// ---------------------------------------------------------------------------
// Tape integration: the whole recurrent pass is one custom node whose
// backward callback is the hand-derived BPTT above.
// ---------------------------------------------------------------------------

struct LstmParamVars {
    std::vector<Var> vars;  // 12 leaves in LstmParams::all() order

    static LstmParamVars create(Tape& tape, const LstmParams& p) {
        LstmParamVars pv;
        for (const DenseMatrix* m : p.all()) pv.vars.push_back(tape.leaf(*m));
        return pv;
    }
};

// Value is h_T; parents are the 12 parameter leaves.
inline Var prox_lstm_node(Tape& tape, const LstmParamVars& pv, const LstmParams& p,
                          const std::vector<DenseMatrix>& xs, double rho) {
    std::vector<ProxLstmStepCache> caches = prox_lstm_forward(p, xs, rho);
    DenseMatrix h_last = caches.back().h;
    LstmParams params_copy = p;
    return tape.custom(pv.vars, std::move(h_last),
                       [params_copy, caches = std::move(caches)](const DenseMatrix& up) {
                           LstmGrads grads = prox_lstm_backward(params_copy, caches, up);
                           std::vector<DenseMatrix> adj;
                           for (DenseMatrix* m : grads.by_param.all()) adj.push_back(*m);
                           return adj;
                       });
}

}  // namespace proxkit

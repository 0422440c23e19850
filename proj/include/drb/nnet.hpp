#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/mathutil.hpp"

namespace drb::nn {

using Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Reverse-mode tape over batched matrices (rows = batch, cols = features).
// ---------------------------------------------------------------------------

class Tape {
  public:
    int leaf(MatrixXd v) {
        nodes_.push_back({std::move(v), {}, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const MatrixXd& val(int id) const { return nodes_[id].val; }

    MatrixXd& grad(int id) {
        auto& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = MatrixXd::Zero(n.val.rows(), n.val.cols());
        return n.grad;
    }

    bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

    int matmul(int a, int b) {
        return push(val(a) * val(b), [a, b](Tape& t, int self) {
            const MatrixXd& g = t.grad(self);
            t.grad(a).noalias() += g * t.val(b).transpose();
            t.grad(b).noalias() += t.val(a).transpose() * g;
        });
    }

    int add(int a, int b) {
        return push(val(a) + val(b), [a, b](Tape& t, int self) {
            t.grad(a) += t.grad(self);
            t.grad(b) += t.grad(self);
        });
    }

    int sub(int a, int b) {
        return push(val(a) - val(b), [a, b](Tape& t, int self) {
            t.grad(a) += t.grad(self);
            t.grad(b) -= t.grad(self);
        });
    }

    int mul(int a, int b) {
        return push(val(a).cwiseProduct(val(b)), [a, b](Tape& t, int self) {
            t.grad(a) += t.grad(self).cwiseProduct(t.val(b));
            t.grad(b) += t.grad(self).cwiseProduct(t.val(a));
        });
    }

    // broadcast-add a 1 x cols row vector (bias)
    int add_rowvec(int a, int b) {
        return push(val(a).rowwise() + val(b).row(0), [a, b](Tape& t, int self) {
            t.grad(a) += t.grad(self);
            t.grad(b).row(0) += t.grad(self).colwise().sum();
        });
    }

    int scalar_mul(int a, double c) {
        return push(val(a) * c, [a, c](Tape& t, int self) { t.grad(a) += c * t.grad(self); });
    }

    int add_const(int a, double c) {
        return push((val(a).array() + c).matrix(),
                    [a](Tape& t, int self) { t.grad(a) += t.grad(self); });
    }

    // elementwise product with a constant matrix (no gradient through c)
    int mul_constmat(int a, const MatrixXd& c) {
        return push(val(a).cwiseProduct(c), [a, c](Tape& t, int self) {
            t.grad(a) += t.grad(self).cwiseProduct(c);
        });
    }

    int sigmoid(int a) {
        MatrixXd s = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
        return push(std::move(s), [a](Tape& t, int self) {
            const auto& s = t.val(self).array();
            t.grad(a).array() += t.grad(self).array() * s * (1.0 - s);
        });
    }

    int tanh_op(int a) {
        return push(val(a).array().tanh().matrix(), [a](Tape& t, int self) {
            const auto& y = t.val(self).array();
            t.grad(a).array() += t.grad(self).array() * (1.0 - y.square());
        });
    }

    // numerically stable log(1 + exp(x))
    int softplus(int a) {
        const auto& x = val(a).array();
        MatrixXd y = (x.max(0.0) + (1.0 + (-x.abs()).exp()).log()).matrix();
        return push(std::move(y), [a](Tape& t, int self) {
            const auto& x = t.val(a).array();
            t.grad(a).array() += t.grad(self).array() / (1.0 + (-x).exp());
        });
    }

    // x * sigmoid(x)
    int silu(int a) {
        const auto& x = val(a).array();
        Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
        return push((x * s).matrix(), [a](Tape& t, int self) {
            const auto& x = t.val(a).array();
            Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
            t.grad(a).array() += t.grad(self).array() * (s + x * s * (1.0 - s));
        });
    }

    int log_op(int a) {
        return push(val(a).array().log().matrix(), [a](Tape& t, int self) {
            t.grad(a).array() += t.grad(self).array() / t.val(a).array();
        });
    }

    int reciprocal(int a) {
        return push(val(a).array().inverse().matrix(), [a](Tape& t, int self) {
            const auto& x = t.val(a).array();
            t.grad(a).array() -= t.grad(self).array() / x.square();
        });
    }

    int square(int a) {
        return push(val(a).array().square().matrix(), [a](Tape& t, int self) {
            t.grad(a).array() += 2.0 * t.grad(self).array() * t.val(a).array();
        });
    }

    int concat_cols(const std::vector<int>& ids) {
        Eigen::Index rows = val(ids[0]).rows(), cols = 0;
        for (int id : ids) cols += val(id).cols();
        MatrixXd v(rows, cols);
        Eigen::Index off = 0;
        for (int id : ids) {
            v.middleCols(off, val(id).cols()) = val(id);
            off += val(id).cols();
        }
        return push(std::move(v), [ids](Tape& t, int self) {
            Eigen::Index off = 0;
            for (int id : ids) {
                Eigen::Index c = t.val(id).cols();
                t.grad(id) += t.grad(self).middleCols(off, c);
                off += c;
            }
        });
    }

    // column-major reinterpret; rows*cols must match
    int reshape(int a, Eigen::Index rows, Eigen::Index cols) {
        if (val(a).size() != rows * cols)
            throw std::invalid_argument("Tape::reshape: size mismatch");
        MatrixXd v = Eigen::Map<const MatrixXd>(val(a).data(), rows, cols);
        return push(std::move(v), [a](Tape& t, int self) {
            t.grad(a) += Eigen::Map<const MatrixXd>(t.grad(self).data(),
                                                    t.val(a).rows(), t.val(a).cols());
        });
    }

    int cols(int a, Eigen::Index start, Eigen::Index len) {
        return push(val(a).middleCols(start, len), [a, start, len](Tape& t, int self) {
            t.grad(a).middleCols(start, len) += t.grad(self);
        });
    }

    int col(int a, int j) {
        return push(val(a).col(j), [a, j](Tape& t, int self) {
            t.grad(a).col(j) += t.grad(self);
        });
    }

    // tile the whole matrix `times` times along rows; grad sums back
    int repeat_rows(int a, int times) {
        const MatrixXd& x = val(a);
        MatrixXd v(x.rows() * times, x.cols());
        for (int r = 0; r < times; ++r) v.middleRows(r * x.rows(), x.rows()) = x;
        return push(std::move(v), [a, times](Tape& t, int self) {
            Eigen::Index rows = t.val(a).rows();
            for (int r = 0; r < times; ++r)
                t.grad(a) += t.grad(self).middleRows(r * rows, rows);
        });
    }

    int mean_all(int a) {
        double inv = 1.0 / static_cast<double>(val(a).size());
        MatrixXd v(1, 1);
        v(0, 0) = val(a).sum() * inv;
        return push(std::move(v), [a, inv](Tape& t, int self) {
            t.grad(a).array() += t.grad(self)(0, 0) * inv;
        });
    }

    int sum_all(int a) {
        MatrixXd v(1, 1);
        v(0, 0) = val(a).sum();
        return push(std::move(v), [a](Tape& t, int self) {
            t.grad(a).array() += t.grad(self)(0, 0);
        });
    }

    int add_scalar_node(int a, int s) { // s is 1x1, broadcast
        return push((val(a).array() + val(s)(0, 0)).matrix(), [a, s](Tape& t, int self) {
            t.grad(a) += t.grad(self);
            t.grad(s)(0, 0) += t.grad(self).sum();
        });
    }

    void backward(int id) {
        if (val(id).size() != 1)
            throw std::invalid_argument("Tape::backward: output must be scalar");
        grad(id)(0, 0) = 1.0;
        for (int i = id; i >= 0; --i)
            if (nodes_[i].back && has_grad(i)) nodes_[i].back(*this, i);
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        MatrixXd val;
        MatrixXd grad;
        std::function<void(Tape&, int)> back;
    };
    std::vector<Node> nodes_;

    int push(MatrixXd v, std::function<void(Tape&, int)> back) {
        nodes_.push_back({std::move(v), {}, std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }
};

// ---------------------------------------------------------------------------
// Named parameter store with a flat view, plus AdamW and soft updates.
// ---------------------------------------------------------------------------

class ParamStore {
  public:
    int add(const std::string& name, int rows, int cols) {
        names_.push_back(name);
        mats_.emplace_back(MatrixXd::Zero(rows, cols));
        grads_.emplace_back(MatrixXd::Zero(rows, cols));
        return static_cast<int>(mats_.size()) - 1;
    }

    std::size_t count() const { return mats_.size(); }
    MatrixXd& mat(int i) { return mats_[i]; }
    const MatrixXd& mat(int i) const { return mats_[i]; }
    MatrixXd& grad(int i) { return grads_[i]; }
    const std::string& name(int i) const { return names_[i]; }

    std::size_t total_size() const {
        std::size_t s = 0;
        for (const auto& m : mats_) s += m.size();
        return s;
    }

    void zero_grads() {
        for (auto& g : grads_) g.setZero();
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd v(total_size());
        Eigen::Index off = 0;
        for (const auto& m : mats_) {
            v.segment(off, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
            off += m.size();
        }
        return v;
    }

    void unflatten(const Eigen::VectorXd& v) {
        if (v.size() != static_cast<Eigen::Index>(total_size()))
            throw std::invalid_argument("ParamStore::unflatten: size mismatch");
        Eigen::Index off = 0;
        for (auto& m : mats_) {
            Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v.segment(off, m.size());
            off += m.size();
        }
    }

    Eigen::VectorXd flatten_grads() const {
        Eigen::VectorXd v(total_size());
        Eigen::Index off = 0;
        for (const auto& g : grads_) {
            v.segment(off, g.size()) = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
            off += g.size();
        }
        return v;
    }

    // lease all parameters onto a tape; returns leaf ids aligned with indices
    std::vector<int> bind(Tape& tape) const {
        std::vector<int> ids(mats_.size());
        for (std::size_t i = 0; i < mats_.size(); ++i) ids[i] = tape.leaf(mats_[i]);
        return ids;
    }

    // pull tape leaf gradients back into the store (accumulating)
    void collect(Tape& tape, const std::vector<int>& ids) {
        for (std::size_t i = 0; i < mats_.size(); ++i)
            if (tape.has_grad(ids[i])) grads_[i] += tape.grad(ids[i]);
    }

  private:
    std::vector<std::string> names_;
    std::vector<MatrixXd> mats_;
    std::vector<MatrixXd> grads_;
};

// Adaptive moments with decoupled weight decay.
class AdamW {
  public:
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;

    void step(ParamStore& params) {
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.count(); ++i) {
                m_.push_back(MatrixXd::Zero(params.mat(i).rows(), params.mat(i).cols()));
                v_.push_back(MatrixXd::Zero(params.mat(i).rows(), params.mat(i).cols()));
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1, t_), bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < params.count(); ++i) {
            const MatrixXd& g = params.grad(static_cast<int>(i));
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * g.cwiseProduct(g);
            MatrixXd mhat = m_[i] / bc1;
            MatrixXd vhat = v_[i] / bc2;
            auto& w = params.mat(static_cast<int>(i));
            w.array() -= lr * (mhat.array() / (vhat.array().sqrt() + eps) +
                               weight_decay * w.array());
        }
    }

  private:
    std::vector<MatrixXd> m_, v_;
    long t_ = 0;
};

inline void soft_update(ParamStore& target, const ParamStore& main, double tau) {
    if (target.count() != main.count())
        throw std::invalid_argument("soft_update: parameter shape mismatch");
    if (!(tau > 0.0 && tau <= 1.0))
        throw std::invalid_argument("soft_update: tau must be in (0,1]");
    for (std::size_t i = 0; i < target.count(); ++i) {
        if (target.mat(static_cast<int>(i)).rows() != main.mat(static_cast<int>(i)).rows() ||
            target.mat(static_cast<int>(i)).cols() != main.mat(static_cast<int>(i)).cols())
            throw std::invalid_argument("soft_update: parameter shape mismatch");
        target.mat(static_cast<int>(i)) = (1.0 - tau) * target.mat(static_cast<int>(i)) +
                                          tau * main.mat(static_cast<int>(i));
    }
}

// ---------------------------------------------------------------------------
// GRU + feed-forward architecture shared by actor and critics. The GRU stack
// consumes the state sequence causally; the FFN reads the previous-step
// hidden stack concatenated with the current state (and, for the cdf critic,
// the evaluation point z).
// ---------------------------------------------------------------------------

struct NetConfig {
    int input_dim = 0;   // state dimension n+2
    int gru_layers = 5;
    int gru_hidden = 0;  // defaults to n in the experiments
    int ffn_layers = 5;
    int ffn_width = 32;
    int output_dim = 1;
    bool z_input = false; // cdf critic: append z to the FFN input

    int ffn_input_dim() const {
        return gru_layers * gru_hidden + input_dim + (z_input ? 1 : 0);
    }
};

class GruFfnNet {
  public:
    NetConfig cfg;
    ParamStore params;

    GruFfnNet() = default;

    GruFfnNet(NetConfig c, std::uint64_t seed) : cfg(c) {
        if (cfg.input_dim < 1 || cfg.gru_layers < 1 || cfg.gru_hidden < 1 ||
            cfg.ffn_layers < 1 || cfg.ffn_width < 1 || cfg.output_dim < 1)
            throw std::invalid_argument("GruFfnNet: all dimensions must be >= 1");
        for (int l = 0; l < cfg.gru_layers; ++l) {
            int in = l == 0 ? cfg.input_dim : cfg.gru_hidden;
            std::string pre = "gru" + std::to_string(l) + ".";
            for (const char* g : {"z", "r", "n"}) {
                params.add(pre + "W" + g, in, cfg.gru_hidden);
                params.add(pre + "U" + g, cfg.gru_hidden, cfg.gru_hidden);
                params.add(pre + "b" + g, 1, cfg.gru_hidden);
            }
        }
        for (int l = 0; l < cfg.ffn_layers; ++l) {
            int in = l == 0 ? cfg.ffn_input_dim() : cfg.ffn_width;
            int out = l + 1 == cfg.ffn_layers ? cfg.output_dim : cfg.ffn_width;
            std::string pre = "ffn" + std::to_string(l) + ".";
            params.add(pre + "W", in, out);
            params.add(pre + "b", 1, out);
        }
        init_params(seed);
    }

    void init_params(std::uint64_t seed) {
        Rng rng(seed);
        for (std::size_t i = 0; i < params.count(); ++i) {
            auto& m = params.mat(static_cast<int>(i));
            double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(
                               m.rows(), 1)));
            if (params.name(static_cast<int>(i)).find(".b") != std::string::npos) {
                m.setZero();
                continue;
            }
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c)
                    m(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
        }
    }

    // Recurrent state: one hidden tape-node per GRU layer.
    struct SeqState {
        std::vector<int> h;
    };

    SeqState initial_state(Tape& tape, Eigen::Index batch) const {
        SeqState s;
        for (int l = 0; l < cfg.gru_layers; ++l)
            s.h.push_back(tape.leaf(MatrixXd::Zero(batch, cfg.gru_hidden)));
        return s;
    }

    // FFN input features at time t: previous hidden stack + current state
    // (+ z appended by the caller when cfg.z_input).
    int features(Tape& tape, const SeqState& state, int y) const {
        std::vector<int> parts = state.h;
        parts.push_back(y);
        return tape.concat_cols(parts);
    }

    // One GRU update h_{t-1} -> h_t driven by the state y_t.
    void gru_step(Tape& tape, const std::vector<int>& bind, SeqState& state, int y) const {
        int x = y;
        for (int l = 0; l < cfg.gru_layers; ++l) {
            int base = 9 * l;
            int Wz = bind[base + 0], Uz = bind[base + 1], bz = bind[base + 2];
            int Wr = bind[base + 3], Ur = bind[base + 4], br = bind[base + 5];
            int Wn = bind[base + 6], Un = bind[base + 7], bn = bind[base + 8];
            int h = state.h[l];
            int z = tape.sigmoid(tape.add_rowvec(
                tape.add(tape.matmul(x, Wz), tape.matmul(h, Uz)), bz));
            int r = tape.sigmoid(tape.add_rowvec(
                tape.add(tape.matmul(x, Wr), tape.matmul(h, Ur)), br));
            int n = tape.tanh_op(tape.add_rowvec(
                tape.add(tape.matmul(x, Wn), tape.mul(r, tape.matmul(h, Un))), bn));
            // h' = (1 - z) .* n + z .* h
            int one_minus_z = tape.scalar_mul(tape.add_const(z, -1.0), -1.0);
            int hn = tape.add(tape.mul(one_minus_z, n), tape.mul(z, h));
            state.h[l] = hn;
            x = hn;
        }
    }

    // Raw FFN output (no head) for an already-assembled input node.
    int ffn(Tape& tape, const std::vector<int>& bind, int input) const {
        int x = input;
        int off = 9 * cfg.gru_layers;
        for (int l = 0; l < cfg.ffn_layers; ++l) {
            int W = bind[off + 2 * l], b = bind[off + 2 * l + 1];
            x = tape.add_rowvec(tape.matmul(x, W), b);
            if (l + 1 < cfg.ffn_layers) x = tape.silu(x);
        }
        return x;
    }
};

// Output heads --------------------------------------------------------------

// Positive positions: softplus plus a small floor (the admissibility c > 0).
inline int actor_head(Tape& tape, int raw, double eps_floor = 1e-6) {
    return tape.add_const(tape.softplus(raw), eps_floor);
}

// Risk critic raw output is 3 columns: (VaR, ES-VaR raw, rho).
struct RiskHeads {
    int var_id, es_id, rho_id;
};

inline RiskHeads risk_critic_heads(Tape& tape, int raw) {
    RiskHeads h;
    h.var_id = tape.col(raw, 0);
    h.es_id = tape.add(h.var_id, tape.softplus(tape.col(raw, 1)));
    h.rho_id = tape.col(raw, 2);
    return h;
}

inline int cdf_head(Tape& tape, int raw) { return tape.sigmoid(raw); }

// ---------------------------------------------------------------------------
// Checkpoints: JSON header (architecture echo + seed) followed by the flat
// parameter vector in little-endian doubles.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const GruFfnNet& net,
                            std::uint64_t seed) {
    nlohmann::json hdr;
    hdr["format"] = "drb-checkpoint-v1";
    hdr["seed"] = seed;
    hdr["config"] = {{"input_dim", net.cfg.input_dim},   {"gru_layers", net.cfg.gru_layers},
                     {"gru_hidden", net.cfg.gru_hidden}, {"ffn_layers", net.cfg.ffn_layers},
                     {"ffn_width", net.cfg.ffn_width},   {"output_dim", net.cfg.output_dim},
                     {"z_input", net.cfg.z_input}};
    hdr["param_count"] = net.params.total_size();
    std::string h = hdr.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    std::uint64_t hlen = h.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    Eigen::VectorXd flat = net.params.flatten();
    f.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

inline GruFfnNet load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string h(hlen, '\0');
    f.read(h.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json hdr = nlohmann::json::parse(h);
    if (hdr.at("format") != "drb-checkpoint-v1")
        throw std::runtime_error("load_checkpoint: unknown format");
    NetConfig cfg;
    cfg.input_dim = hdr["config"]["input_dim"];
    cfg.gru_layers = hdr["config"]["gru_layers"];
    cfg.gru_hidden = hdr["config"]["gru_hidden"];
    cfg.ffn_layers = hdr["config"]["ffn_layers"];
    cfg.ffn_width = hdr["config"]["ffn_width"];
    cfg.output_dim = hdr["config"]["output_dim"];
    cfg.z_input = hdr["config"]["z_input"];
    GruFfnNet net(cfg, hdr.at("seed").get<std::uint64_t>());
    Eigen::VectorXd flat(net.params.total_size());
    f.read(reinterpret_cast<char*>(flat.data()),
           static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated parameter block");
    net.params.unflatten(flat);
    return net;
}

} // namespace drb::nn

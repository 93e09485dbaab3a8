#include "transformer.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace gracelab::model::detail {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using CMap = Eigen::Map<const Mat>;
using MMap = Eigen::Map<Mat>;
using CVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

constexpr double kRmsEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// y = g * x / rms(x), row-wise. Stores 1/rms per row.
void rmsnorm(const Mat& x, const CVecMap& gain, Mat& y, Eigen::VectorXd& inv_rms) {
    const auto cols = static_cast<double>(x.cols());
    inv_rms.resize(x.rows());
    y.resize(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        inv_rms[r] = 1.0 / std::sqrt(x.row(r).squaredNorm() / cols + kRmsEps);
        y.row(r) = (x.row(r) * inv_rms[r]).cwiseProduct(gain);
    }
}

// Returns dx and accumulates dgain.
Mat rmsnorm_backward(const Mat& x, const Eigen::VectorXd& inv_rms, const CVecMap& gain, const Mat& dy,
                     VecMap& dgain) {
    const auto cols = static_cast<double>(x.cols());
    Mat dx(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Vec xhat = x.row(r) * inv_rms[r];
        dgain += dy.row(r).cwiseProduct(xhat);
        const Vec dxhat = dy.row(r).cwiseProduct(gain);
        const double proj = dxhat.dot(xhat) / cols;
        dx.row(r) = inv_rms[r] * (dxhat - xhat * proj);
    }
    return dx;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

struct LayerCache {
    Mat x_in;
    Mat a;
    Eigen::VectorXd inv_rms1;
    Mat qkv;
    std::vector<Mat> probs;  // per head, T x T
    Mat heads;               // concatenated head outputs, T x D
    Mat x_mid;
    Mat b;
    Eigen::VectorXd inv_rms2;
    Mat pre;                 // T x 4D, before GELU
    Mat act;                 // T x 4D, after GELU
};

}  // namespace

Offsets offsets(const ModelConfig& c) {
    const std::size_t V = c.vocab_size;
    const std::size_t D = c.embed_dim;
    const std::size_t C = c.context_len;
    Offsets o;
    std::size_t at = 0;
    o.tok = at;
    at += V * D;
    o.pos = at;
    at += C * D;
    for (std::uint32_t l = 0; l < c.num_layers; ++l) {
        LayerOffsets lo;
        lo.ln1 = at;
        at += D;
        lo.qkv = at;
        at += D * 3 * D;
        lo.attn_out = at;
        at += D * D;
        lo.ln2 = at;
        at += D;
        lo.mlp_in = at;
        at += D * 4 * D;
        lo.mlp_out = at;
        at += 4 * D * D;
        o.layers.push_back(lo);
    }
    o.lnf = at;
    at += D;
    o.head = at;
    at += D * V;
    o.total = at;
    return o;
}

double window_forward_backward(const ModelConfig& config,
                               const Offsets& off,
                               std::span<const double> params,
                               std::span<const corpus::TokenId> inputs,
                               std::span<const corpus::TokenId> targets,
                               std::span<double> grad,
                               std::vector<double>* per_token,
                               std::vector<corpus::TokenId>* argmax) {
    const Eigen::Index T = static_cast<Eigen::Index>(inputs.size());
    const Eigen::Index D = config.embed_dim;
    const Eigen::Index V = config.vocab_size;
    const Eigen::Index H = config.num_heads;
    const Eigen::Index hd = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* p = params.data();

    const CMap tok(p + off.tok, V, D);
    const CMap pos(p + off.pos, config.context_len, D);

    Mat x(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        x.row(t) = tok.row(inputs[static_cast<std::size_t>(t)]) + pos.row(t);
    }

    std::vector<LayerCache> caches(config.num_layers);
    for (std::uint32_t l = 0; l < config.num_layers; ++l) {
        const auto& lo = off.layers[l];
        auto& c = caches[l];
        const CVecMap g1(p + lo.ln1, D);
        const CMap wqkv(p + lo.qkv, D, 3 * D);
        const CMap wo(p + lo.attn_out, D, D);
        const CVecMap g2(p + lo.ln2, D);
        const CMap wfc(p + lo.mlp_in, D, 4 * D);
        const CMap wproj(p + lo.mlp_out, 4 * D, D);

        c.x_in = x;
        rmsnorm(c.x_in, g1, c.a, c.inv_rms1);
        c.qkv.noalias() = c.a * wqkv;
        c.heads.resize(T, D);
        c.probs.resize(static_cast<std::size_t>(H));
        for (Eigen::Index h = 0; h < H; ++h) {
            const auto q = c.qkv.block(0, h * hd, T, hd);
            const auto k = c.qkv.block(0, D + h * hd, T, hd);
            const auto v = c.qkv.block(0, 2 * D + h * hd, T, hd);
            Mat& P = c.probs[static_cast<std::size_t>(h)];
            P.noalias() = (q * k.transpose()) * scale;
            for (Eigen::Index i = 0; i < T; ++i) {
                const double mx = P.row(i).head(i + 1).maxCoeff();
                double sum = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    P(i, j) = std::exp(P(i, j) - mx);
                    sum += P(i, j);
                }
                P.row(i).head(i + 1) /= sum;
                P.row(i).tail(T - i - 1).setZero();
            }
            c.heads.block(0, h * hd, T, hd).noalias() = P * v;
        }
        c.x_mid.noalias() = c.x_in + c.heads * wo;
        rmsnorm(c.x_mid, g2, c.b, c.inv_rms2);
        c.pre.noalias() = c.b * wfc;
        c.act = c.pre.unaryExpr([](double z) { return gelu(z); });
        x.noalias() = c.x_mid + c.act * wproj;
    }

    const CVecMap gf(p + off.lnf, D);
    const CMap whead(p + off.head, D, V);
    Mat f;
    Eigen::VectorXd inv_rmsf;
    rmsnorm(x, gf, f, inv_rmsf);
    Mat logits = f * whead;

    double total = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        Eigen::Index best = 0;
        const double mx = logits.row(t).maxCoeff(&best);
        if (argmax != nullptr) {
            argmax->push_back(static_cast<corpus::TokenId>(best));
        }
        const auto y = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(t)]);
        const double shifted_target = logits(t, y) - mx;
        double sum = 0.0;
        for (Eigen::Index j = 0; j < V; ++j) {
            logits(t, j) = std::exp(logits(t, j) - mx);
            sum += logits(t, j);
        }
        const double nll = std::log(sum) - shifted_target;
        total += nll;
        if (per_token != nullptr) {
            per_token->push_back(nll);
        }
        logits.row(t) /= sum;
    }

    if (grad.empty()) {
        return total;
    }

    // logits now holds softmax probabilities; turn them into dLoss/dlogits.
    Mat& dlogits = logits;
    for (Eigen::Index t = 0; t < T; ++t) {
        dlogits(t, static_cast<Eigen::Index>(targets[static_cast<std::size_t>(t)])) -= 1.0;
    }
    double* g = grad.data();
    MMap(g + off.head, D, V).noalias() += f.transpose() * dlogits;
    Mat df = dlogits * whead.transpose();
    VecMap dgf(g + off.lnf, D);
    Mat dx = rmsnorm_backward(x, inv_rmsf, gf, df, dgf);

    for (std::uint32_t li = config.num_layers; li-- > 0;) {
        const auto& lo = off.layers[li];
        const auto& c = caches[li];
        const CVecMap g1(p + lo.ln1, D);
        const CMap wqkv(p + lo.qkv, D, 3 * D);
        const CMap wo(p + lo.attn_out, D, D);
        const CVecMap g2(p + lo.ln2, D);
        const CMap wfc(p + lo.mlp_in, D, 4 * D);
        const CMap wproj(p + lo.mlp_out, 4 * D, D);

        MMap(g + lo.mlp_out, 4 * D, D).noalias() += c.act.transpose() * dx;
        Mat dpre = dx * wproj.transpose();
        for (Eigen::Index i = 0; i < dpre.rows(); ++i) {
            for (Eigen::Index j = 0; j < dpre.cols(); ++j) {
                dpre(i, j) *= gelu_grad(c.pre(i, j));
            }
        }
        MMap(g + lo.mlp_in, D, 4 * D).noalias() += c.b.transpose() * dpre;
        const Mat db = dpre * wfc.transpose();
        VecMap dg2(g + lo.ln2, D);
        const Mat dx_mid = dx + rmsnorm_backward(c.x_mid, c.inv_rms2, g2, db, dg2);

        MMap(g + lo.attn_out, D, D).noalias() += c.heads.transpose() * dx_mid;
        const Mat dheads = dx_mid * wo.transpose();
        Mat dqkv(T, 3 * D);
        for (Eigen::Index h = 0; h < H; ++h) {
            const auto q = c.qkv.block(0, h * hd, T, hd);
            const auto k = c.qkv.block(0, D + h * hd, T, hd);
            const auto v = c.qkv.block(0, 2 * D + h * hd, T, hd);
            const Mat& P = c.probs[static_cast<std::size_t>(h)];
            const auto dout = dheads.block(0, h * hd, T, hd);

            dqkv.block(0, 2 * D + h * hd, T, hd).noalias() = P.transpose() * dout;
            Mat dP = dout * v.transpose();
            for (Eigen::Index i = 0; i < T; ++i) {
                const double rowdot = dP.row(i).dot(P.row(i));
                dP.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - rowdot).matrix());
            }
            dP *= scale;
            dqkv.block(0, h * hd, T, hd).noalias() = dP * k;
            dqkv.block(0, D + h * hd, T, hd).noalias() = dP.transpose() * q;
        }
        MMap(g + lo.qkv, D, 3 * D).noalias() += c.a.transpose() * dqkv;
        const Mat da = dqkv * wqkv.transpose();
        VecMap dg1(g + lo.ln1, D);
        dx = dx_mid + rmsnorm_backward(c.x_in, c.inv_rms1, g1, da, dg1);
    }

    MMap dtok(g + off.tok, V, D);
    MMap dpos(g + off.pos, config.context_len, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        dtok.row(inputs[static_cast<std::size_t>(t)]) += dx.row(t);
        dpos.row(t) += dx.row(t);
    }
    return total;
}

}  // namespace gracelab::model::detail

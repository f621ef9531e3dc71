#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "genret/embedding.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/optim.hpp"
#include "genret/random.hpp"
#include "genret/semantic_id.hpp"

namespace genret {

enum class Activation { tanh, identity };

struct RqVaeConfig {
    std::size_t num_levels = 4;       ///< M
    std::size_t codebook_size = 1024; ///< K
    std::size_t latent_dim = 8;       ///< d_RQ
    std::size_t hidden_dim = 32;
    double commitment_weight = 0.25;  ///< beta_quant
    double learning_rate = 1e-2;
    std::size_t epochs = 100;
    std::size_t batch_size = 0;       ///< 0 = full batch
    std::uint64_t seed = 0;
    Activation activation = Activation::tanh;

    void validate() const {
        if (num_levels < 1) throw ConfigError("num_levels must be >= 1");
        if (codebook_size < 2) throw ConfigError("codebook_size must be >= 2");
        if (latent_dim < 2) throw ConfigError("latent_dim must be >= 2");
        if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
        if (!(commitment_weight > 0.0)) throw ConfigError("commitment_weight must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    }
};

using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Encoder (input -> hidden -> latent), decoder (latent -> hidden -> input) and
/// M codebooks, all stored in one flat parameter vector. Matrices are
/// column-major; codebook l is a latent_dim x K matrix whose columns are codes.
class RqVaeModel {
public:
    RqVaeModel() = default;

    RqVaeModel(RqVaeConfig config, std::size_t input_dim) : config_(config), input_dim_(input_dim) {
        config_.validate();
        if (input_dim == 0) throw ConfigError("input dimension must be positive");
        const std::size_t d = input_dim, h = config_.hidden_dim, r = config_.latent_dim;
        std::size_t off = 0;
        auto place = [&](std::size_t n) {
            std::size_t o = off;
            off += n;
            return o;
        };
        enc_w1_ = place(h * d);
        enc_b1_ = place(h);
        enc_w2_ = place(r * h);
        enc_b2_ = place(r);
        dec_w1_ = place(h * r);
        dec_b1_ = place(h);
        dec_w2_ = place(d * h);
        dec_b2_ = place(d);
        codebooks_ = place(config_.num_levels * r * config_.codebook_size);
        params_.assign(off, 0.0);
    }

    [[nodiscard]] const RqVaeConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::size_t input_dim() const noexcept { return input_dim_; }
    [[nodiscard]] std::size_t latent_dim() const noexcept { return config_.latent_dim; }
    [[nodiscard]] std::size_t hidden_dim() const noexcept { return config_.hidden_dim; }
    [[nodiscard]] std::size_t num_levels() const noexcept { return config_.num_levels; }
    [[nodiscard]] std::size_t codebook_size() const noexcept { return config_.codebook_size; }

    [[nodiscard]] std::vector<double>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<double>& params() const noexcept { return params_; }
    /// Offset of the first codebook parameter; everything before it is encoder/decoder.
    [[nodiscard]] std::size_t codebook_offset() const noexcept { return codebooks_; }

#define GENRET_RQ_BLOCK(name, off, rows, cols)                                                     \
    MatMap name() { return MatMap(params_.data() + (off), static_cast<Eigen::Index>(rows),         \
                                  static_cast<Eigen::Index>(cols)); }                              \
    ConstMatMap name() const { return ConstMatMap(params_.data() + (off), static_cast<Eigen::Index>(rows), \
                                                  static_cast<Eigen::Index>(cols)); }
    GENRET_RQ_BLOCK(enc_w1, enc_w1_, config_.hidden_dim, input_dim_)
    GENRET_RQ_BLOCK(enc_b1, enc_b1_, config_.hidden_dim, 1)
    GENRET_RQ_BLOCK(enc_w2, enc_w2_, config_.latent_dim, config_.hidden_dim)
    GENRET_RQ_BLOCK(enc_b2, enc_b2_, config_.latent_dim, 1)
    GENRET_RQ_BLOCK(dec_w1, dec_w1_, config_.hidden_dim, config_.latent_dim)
    GENRET_RQ_BLOCK(dec_b1, dec_b1_, config_.hidden_dim, 1)
    GENRET_RQ_BLOCK(dec_w2, dec_w2_, input_dim_, config_.hidden_dim)
    GENRET_RQ_BLOCK(dec_b2, dec_b2_, input_dim_, 1)
#undef GENRET_RQ_BLOCK

    MatMap codebook(std::size_t level) {
        return MatMap(params_.data() + codebooks_ + level * config_.latent_dim * config_.codebook_size,
                      static_cast<Eigen::Index>(config_.latent_dim), static_cast<Eigen::Index>(config_.codebook_size));
    }
    [[nodiscard]] ConstMatMap codebook(std::size_t level) const {
        return ConstMatMap(params_.data() + codebooks_ + level * config_.latent_dim * config_.codebook_size,
                           static_cast<Eigen::Index>(config_.latent_dim),
                           static_cast<Eigen::Index>(config_.codebook_size));
    }
    [[nodiscard]] std::vector<ConstMatMap> codebooks() const {
        std::vector<ConstMatMap> out;
        for (std::size_t l = 0; l < config_.num_levels; ++l) out.push_back(codebook(l));
        return out;
    }

    bool operator==(const RqVaeModel& o) const {
        return input_dim_ == o.input_dim_ && params_ == o.params_ && config_.num_levels == o.config_.num_levels &&
               config_.codebook_size == o.config_.codebook_size && config_.latent_dim == o.config_.latent_dim &&
               config_.hidden_dim == o.config_.hidden_dim && config_.activation == o.config_.activation;
    }

private:
    RqVaeConfig config_;
    std::size_t input_dim_ = 0;
    std::size_t enc_w1_ = 0, enc_b1_ = 0, enc_w2_ = 0, enc_b2_ = 0;
    std::size_t dec_w1_ = 0, dec_b1_ = 0, dec_w2_ = 0, dec_b2_ = 0;
    std::size_t codebooks_ = 0;
    std::vector<double> params_;
};

namespace detail {

inline Vec activate(Activation a, const Vec& v) {
    return a == Activation::tanh ? Vec(v.array().tanh()) : v;
}

/// Derivative of the activation expressed through its output.
inline Vec activation_slope(Activation a, const Vec& out) {
    return a == Activation::tanh ? Vec(1.0 - out.array().square()) : Vec::Ones(out.size());
}

}  // namespace detail

/// Encoder forward pass: latent = W2 act(W1 x + b1) + b2.
inline Vec encode(const RqVaeModel& model, std::span<const double> x) {
    if (x.size() != model.input_dim())
        throw DimensionError("encoder expects dimension " + std::to_string(model.input_dim()) + ", got " +
                             std::to_string(x.size()));
    ConstVecMap xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Vec h = detail::activate(model.config().activation, model.enc_w1() * xv + model.enc_b1());
    return model.enc_w2() * h + model.enc_b2();
}

inline Vec decode(const RqVaeModel& model, const Vec& z) {
    if (static_cast<std::size_t>(z.size()) != model.latent_dim()) throw DimensionError("decoder latent size mismatch");
    const Vec h = detail::activate(model.config().activation, model.dec_w1() * z + model.dec_b1());
    return model.dec_w2() * h + model.dec_b2();
}

struct Quantization {
    std::vector<std::uint32_t> codes;  ///< one per level
    Vec quantized;                     ///< z, the sum of selected code vectors
    std::vector<Vec> residuals;        ///< r^1 .. r^{M+1}; residuals[0] is the latent itself
};

/// Residual quantization: each level picks the code nearest (squared L2, lowest
/// index on ties) to the current residual and subtracts it.
template <typename Codebooks>
Quantization quantize(const Codebooks& codebooks, const Vec& latent) {
    Quantization q;
    q.quantized = Vec::Zero(latent.size());
    q.residuals.push_back(latent);
    for (const auto& book : codebooks) {
        if (book.rows() != latent.size()) throw DimensionError("codebook dimension does not match latent");
        const Vec& r = q.residuals.back();
        Eigen::Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < book.cols(); ++k) {
            const double d = (book.col(k) - r).squaredNorm();
            if (d < best_d) best_d = d, best = k;
        }
        q.codes.push_back(static_cast<std::uint32_t>(best));
        q.quantized += book.col(best);
        q.residuals.push_back(r - book.col(best));
    }
    return q;
}

struct LossTerms {
    double recons = 0.0;
    double quant = 0.0;
    [[nodiscard]] double total() const noexcept { return recons + quant; }
};

/// Reconstruction and quantization loss of one sample. The stop-gradient
/// operator does not change values, so both quantization terms share the same
/// squared distance here; it only matters for gradients.
template <typename Codebooks>
LossTerms losses(const Codebooks& codebooks, double commitment_weight, std::span<const double> x,
                 const Vec& reconstruction, const Quantization& q) {
    LossTerms out;
    ConstVecMap xv(x.data(), static_cast<Eigen::Index>(x.size()));
    out.recons = (xv - reconstruction).squaredNorm();
    std::size_t l = 0;
    for (const auto& book : codebooks) {
        const double d = (q.residuals[l] - book.col(q.codes[l])).squaredNorm();
        out.quant += d + commitment_weight * d;
        ++l;
    }
    return out;
}

inline LossTerms losses(const RqVaeModel& model, std::span<const double> x) {
    const Quantization q = quantize(model.codebooks(), encode(model, x));
    return losses(model.codebooks(), model.config().commitment_weight, x, decode(model, q.quantized), q);
}

/// Forward + backward for one sample. Adds d(loss)/d(params) into `grad`.
/// Gradient routing: the decoder-input gradient is copied to the latent
/// (straight-through), codebooks receive only the codebook term, and the
/// commitment term reaches the encoder through its residual.
inline LossTerms accumulate_gradient(const RqVaeModel& model, std::span<const double> x, std::vector<double>& grad) {
    const auto act = model.config().activation;
    const double beta = model.config().commitment_weight;
    const std::size_t d = model.input_dim(), h = model.hidden_dim(), r = model.latent_dim();
    ConstVecMap xv(x.data(), static_cast<Eigen::Index>(d));

    const Vec h1 = detail::activate(act, model.enc_w1() * xv + model.enc_b1());
    const Vec latent = model.enc_w2() * h1 + model.enc_b2();
    const Quantization q = quantize(model.codebooks(), latent);
    const Vec h2 = detail::activate(act, model.dec_w1() * q.quantized + model.dec_b1());
    const Vec recon = model.dec_w2() * h2 + model.dec_b2();

    auto view = [&](std::size_t off, std::size_t rows, std::size_t cols) {
        return MatMap(grad.data() + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    };
    // offsets follow RqVaeModel's layout
    const std::size_t o_ew1 = 0, o_eb1 = o_ew1 + h * d, o_ew2 = o_eb1 + h, o_eb2 = o_ew2 + r * h;
    const std::size_t o_dw1 = o_eb2 + r, o_db1 = o_dw1 + h * r, o_dw2 = o_db1 + h, o_db2 = o_dw2 + d * h;
    const std::size_t o_cb = model.codebook_offset();

    LossTerms out;
    const Vec g_recon = 2.0 * (recon - xv);
    out.recons = (recon - xv).squaredNorm();

    view(o_dw2, d, h).noalias() += g_recon * h2.transpose();
    view(o_db2, d, 1) += g_recon;
    const Vec g_a2 = (model.dec_w2().transpose() * g_recon).cwiseProduct(detail::activation_slope(act, h2));
    view(o_dw1, h, r).noalias() += g_a2 * q.quantized.transpose();
    view(o_db1, h, 1) += g_a2;
    Vec g_latent = model.dec_w1().transpose() * g_a2;  // straight-through

    const std::size_t k = model.codebook_size();
    for (std::size_t l = 0; l < model.num_levels(); ++l) {
        const Vec diff = q.residuals[l] - model.codebook(l).col(q.codes[l]);
        const double dist = diff.squaredNorm();
        out.quant += dist + beta * dist;
        view(o_cb + l * r * k, r, k).col(q.codes[l]) += -2.0 * diff;
        g_latent += 2.0 * beta * diff;
    }

    view(o_ew2, r, h).noalias() += g_latent * h1.transpose();
    view(o_eb2, r, 1) += g_latent;
    const Vec g_a1 = (model.enc_w2().transpose() * g_latent).cwiseProduct(detail::activation_slope(act, h1));
    view(o_ew1, h, d).noalias() += g_a1 * xv.transpose();
    view(o_eb1, h, 1) += g_a1;
    return out;
}

/// Seeded model with uniform(-a, a) weights, a = sqrt(6 / (fan_in + fan_out)),
/// zero biases and zero codebooks.
inline RqVaeModel initialize_rqvae(const RqVaeConfig& config, std::size_t input_dim) {
    RqVaeModel model(config, input_dim);
    Rng rng = make_rng(config.seed, "rqvae/init");
    auto fill = [&](MatMap m) {
        const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * a;
    };
    fill(model.enc_w1());
    fill(model.enc_w2());
    fill(model.dec_w1());
    fill(model.dec_w2());
    return model;
}

/// k-means++ seeding of every codebook from the residuals its level actually
/// sees, quantizing earlier levels with their freshly seeded codes. When the
/// data has fewer distinct residuals than K, the remaining codes are jittered
/// copies of sampled residuals.
inline void seed_codebooks(RqVaeModel& model, const std::vector<std::span<const double>>& data) {
    if (data.empty()) throw Error("cannot seed codebooks without data");
    Rng rng = make_rng(model.config().seed, "rqvae/codebook-seed");
    const std::size_t n = data.size(), k = model.codebook_size();
    std::vector<Vec> residuals;
    residuals.reserve(n);
    for (const auto& x : data) residuals.push_back(encode(model, x));

    for (std::size_t l = 0; l < model.num_levels(); ++l) {
        MatMap book = model.codebook(l);
        double spread = 0.0;
        for (const auto& rv : residuals) spread += rv.squaredNorm();
        const double jitter = 1e-3 * std::sqrt(spread / static_cast<double>(n * model.latent_dim())) + 1e-9;

        std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
        for (std::size_t c = 0; c < k; ++c) {
            double mass = 0.0;
            if (c > 0)
                for (double v : nearest) mass += v;
            std::size_t pick;
            if (c == 0 || !(mass > 0.0)) {
                pick = uniform_index(rng, n);
            } else {
                double target = uniform01(rng) * mass;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    target -= nearest[i];
                    if (target < 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
            book.col(static_cast<Eigen::Index>(c)) = residuals[pick];
            if (c > 0 && !(mass > 0.0))
                for (Eigen::Index i = 0; i < book.rows(); ++i) book(i, static_cast<Eigen::Index>(c)) += jitter * (2.0 * uniform01(rng) - 1.0);
            for (std::size_t i = 0; i < n; ++i)
                nearest[i] = std::min(nearest[i], (residuals[i] - book.col(static_cast<Eigen::Index>(c))).squaredNorm());
        }
        for (auto& rv : residuals) {
            Eigen::Index best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < book.cols(); ++c) {
                const double dd = (book.col(c) - rv).squaredNorm();
                if (dd < best_d) best_d = dd, best = c;
            }
            rv -= book.col(best);
        }
    }
}

struct RqVaeTrainingReport {
    std::vector<double> epoch_loss;  ///< mean total loss over the training set before each epoch's updates
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

inline double mean_total_loss(const RqVaeModel& model, const std::vector<std::span<const double>>& data) {
    double s = 0.0;
    for (const auto& x : data) s += losses(model, x).total();
    return s / static_cast<double>(data.size());
}

inline std::vector<std::span<const double>> rows_of(const EmbeddingTable& table) {
    std::vector<std::span<const double>> rows;
    rows.reserve(table.size());
    for (const auto& [id, v] : table.entries()) rows.emplace_back(v);
    return rows;
}

/// Trains encoder, decoder and codebooks with Adam on the mean per-sample
/// recons + quant loss. Deterministic given config.seed.
inline RqVaeModel train_rqvae(const RqVaeConfig& config, const EmbeddingTable& table,
                              RqVaeTrainingReport* report = nullptr) {
    config.validate();
    if (table.empty()) throw Error("cannot train on an empty embedding table");
    RqVaeModel model = initialize_rqvae(config, table.dimension());
    const auto data = rows_of(table);
    seed_codebooks(model, data);

    RqVaeTrainingReport rep;
    rep.initial_loss = mean_total_loss(model, data);
    Adam opt(model.params().size(), config.learning_rate);
    Rng shuffle_rng = make_rng(config.seed, "rqvae/shuffle");
    const std::size_t batch = config.batch_size == 0 ? data.size() : std::min(config.batch_size, data.size());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(model.params().size());

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (batch < data.size())
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < data.size(); start += batch) {
            const std::size_t stop = std::min(start + batch, data.size());
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i) epoch_total += accumulate_gradient(model, data[order[i]], grad).total();
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (auto& gv : grad) gv *= scale;
            opt.step(model.params(), grad);
        }
        epoch_total /= static_cast<double>(data.size());
        if (!std::isfinite(epoch_total)) throw TrainingDivergedError("rq-vae training", epoch);
        rep.epoch_loss.push_back(epoch_total);
    }
    rep.final_loss = mean_total_loss(model, data);
    if (!std::isfinite(rep.final_loss)) throw TrainingDivergedError("rq-vae training", config.epochs);
    if (report) *report = std::move(rep);
    return model;
}

using SidAssignments = std::map<std::string, SemanticId>;

/// Base codes from quantize(encode(x)) plus a disambiguation code: ads sharing
/// base codes are numbered 0, 1, 2, ... in ascending ad_id order.
inline SidAssignments assign_sids(const RqVaeModel& model, const EmbeddingTable& table) {
    SidAssignments out;
    std::map<std::vector<std::uint32_t>, std::uint32_t> next_index;
    const auto books = model.codebooks();
    for (const auto& [id, x] : table.entries()) {  // ascending ad_id
        auto codes = quantize(books, encode(model, x)).codes;
        const std::uint32_t dis = next_index[codes]++;
        codes.push_back(dis);
        out.emplace(id, SemanticId{std::move(codes)});
    }
    return out;
}

struct CodebookMetrics {
    double collision_rate = 0.0;
    std::size_t max_collision = 0;
    std::vector<double> usage_per_level;
    double mean_usage = 0.0;
};

/// Collision and usage statistics over base codes (the disambiguation code is
/// ignored). `codebook_size` is K.
inline CodebookMetrics codebook_metrics(const SidAssignments& sids, std::size_t codebook_size) {
    if (sids.empty()) throw MetricError("codebook metrics need at least one assignment");
    std::map<std::vector<std::uint32_t>, std::size_t> groups;
    std::size_t levels = 0;
    for (const auto& [id, sid] : sids) {
        if (sid.size() < 1) throw MetricError("empty semantic id for '" + id + "'");
        levels = sid.size() - 1;
        groups[std::vector<std::uint32_t>(sid.codes.begin(), sid.codes.end() - 1)]++;
    }
    CodebookMetrics m;
    m.collision_rate = 1.0 - static_cast<double>(groups.size()) / static_cast<double>(sids.size());
    for (const auto& [codes, count] : groups) m.max_collision = std::max(m.max_collision, count);
    for (std::size_t l = 0; l < levels; ++l) {
        std::vector<bool> used(codebook_size, false);
        for (const auto& [id, sid] : sids)
            if (sid.codes[l] < codebook_size) used[sid.codes[l]] = true;
        m.usage_per_level.push_back(static_cast<double>(std::count(used.begin(), used.end(), true)) /
                                    static_cast<double>(codebook_size));
    }
    if (!m.usage_per_level.empty())
        m.mean_usage = std::accumulate(m.usage_per_level.begin(), m.usage_per_level.end(), 0.0) /
                       static_cast<double>(m.usage_per_level.size());
    return m;
}

inline io::json rqvae_config_to_json(const RqVaeConfig& c) {
    return {{"num_levels", c.num_levels},
            {"codebook_size", c.codebook_size},
            {"latent_dim", c.latent_dim},
            {"hidden_dim", c.hidden_dim},
            {"commitment_weight", c.commitment_weight},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"activation", c.activation == Activation::tanh ? "tanh" : "identity"}};
}

inline RqVaeConfig rqvae_config_from_json(const io::json& j, RqVaeConfig c = {}) {
    c.num_levels = j.value("num_levels", c.num_levels);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.commitment_weight = j.value("commitment_weight", c.commitment_weight);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("activation")) {
        const auto a = j.at("activation").get<std::string>();
        if (a == "tanh") c.activation = Activation::tanh;
        else if (a == "identity") c.activation = Activation::identity;
        else throw ConfigError("unknown activation '" + a + "'");
    }
    c.validate();
    return c;
}

inline void save_rqvae(const RqVaeModel& model, const std::filesystem::path& path) {
    io::write_json(path, {{"format", "genret-rqvae"},
                          {"version", 1},
                          {"input_dim", model.input_dim()},
                          {"config", rqvae_config_to_json(model.config())},
                          {"params", model.params()}});
}

inline RqVaeModel load_rqvae(const std::filesystem::path& path) {
    const auto j = io::read_json(path);
    if (j.value("format", "") != "genret-rqvae") throw ParseError("not an rq-vae snapshot: " + path.string());
    RqVaeModel model(rqvae_config_from_json(j.at("config")), j.at("input_dim").get<std::size_t>());
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != model.params().size()) throw ParseError("rq-vae snapshot parameter count mismatch");
    model.params() = std::move(params);
    return model;
}

inline void save_sids(const SidAssignments& sids, const std::filesystem::path& path) {
    std::vector<io::json> recs;
    for (const auto& [id, sid] : sids) recs.push_back({{"ad_id", id}, {"tokens", render_tokens(sid)}});
    io::write_jsonl(path, recs);
}

inline SidAssignments load_sids(const std::filesystem::path& path) {
    SidAssignments out;
    io::for_each_jsonl(path, [&](const io::json& rec, std::size_t line) {
        std::vector<Token> toks;
        for (const auto& t : rec.at("tokens")) toks.push_back(parse_token(t.get<std::string>()));
        auto id = rec.at("ad_id").get<std::string>();
        if (!out.emplace(id, sid_from_tokens(toks)).second) throw ParseError("duplicate ad_id '" + id + "'", line);
    });
    return out;
}

}  // namespace genret

#ifndef RNSIM_MANIFOLD_CODEC_HPP
#define RNSIM_MANIFOLD_CODEC_HPP

// Autoencoder compressing the m*n DLV grid to an l-dimensional code.
// Both networks work on standardised log-DLVs; the decoder output is
// exponentiated, so every decoded grid is strictly positive and therefore
// maps to an arbitrage-free price grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rnsim/density_flow.hpp"
#include "rnsim/diffnet.hpp"
#include "rnsim/errors.hpp"
#include "rnsim/grid_model.hpp"

namespace rnsim {

struct CodecArchitecture {
  int latent_dim = 3;
  std::vector<int> hidden{64, 64, 64};
  Activation activation = Activation::tanh;
};

/// Flattens maturity-major, strike-minor.
inline Eigen::VectorXd flatten(const Eigen::MatrixXd& grid) {
  Eigen::VectorXd v(grid.size());
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.cols(); ++j) v[i * grid.cols() + j] = grid(i, j);
  return v;
}

inline Eigen::MatrixXd unflatten(const Eigen::Ref<const Eigen::VectorXd>& v, int m, int n) {
  Eigen::MatrixXd g(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = v[i * n + j];
  return g;
}

class Codec {
 public:
  Codec() = default;

  /// Networks are initialised from `seed`; the log-DLV standardisation is
  /// taken from `dlv_columns` (mn x T, one grid per column).
  Codec(GridSpecPtr spec, CodecArchitecture arch, const Eigen::MatrixXd& dlv_columns, std::uint64_t seed)
      : spec_(std::move(spec)), arch_(std::move(arch)) {
    const int mn = spec_->size();
    if (arch_.latent_dim < 1 || arch_.latent_dim > mn) throw ConfigError("codec: latent dimension must be in [1, mn]");
    if (dlv_columns.rows() != mn || dlv_columns.cols() < 1) throw DataError("codec: dlv data shape mismatch");
    const Eigen::MatrixXd logs = dlv_columns.array().log().matrix();
    log_mean_ = logs.rowwise().mean();
    log_scale_.resize(mn);
    for (int r = 0; r < mn; ++r) {
      const double var = (logs.row(r).array() - log_mean_[r]).square().mean();
      log_scale_[r] = var > 1e-16 ? std::sqrt(var) : 1.0;
    }
    std::vector<int> enc{mn};
    enc.insert(enc.end(), arch_.hidden.begin(), arch_.hidden.end());
    enc.push_back(arch_.latent_dim);
    std::vector<int> dec{arch_.latent_dim};
    dec.insert(dec.end(), arch_.hidden.rbegin(), arch_.hidden.rend());
    dec.push_back(mn);
    Rng rng(seed);
    encoder_ = Mlp(enc, arch_.activation);
    encoder_.initialize(rng);
    decoder_ = Mlp(dec, arch_.activation);
    decoder_.initialize(rng);
    code_lo_ = Eigen::VectorXd::Constant(arch_.latent_dim, -1.0);
    code_hi_ = Eigen::VectorXd::Constant(arch_.latent_dim, 1.0);
  }

  const GridSpecPtr& spec() const { return spec_; }
  const CodecArchitecture& architecture() const { return arch_; }
  int latent_dim() const { return arch_.latent_dim; }
  Mlp& encoder() { return encoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& decoder() const { return decoder_; }
  const Eigen::VectorXd& log_mean() const { return log_mean_; }
  const Eigen::VectorXd& log_scale() const { return log_scale_; }

  /// Range of codes seen on the training data; decoding outside it is an
  /// extrapolation.
  const Eigen::VectorXd& code_lo() const { return code_lo_; }
  const Eigen::VectorXd& code_hi() const { return code_hi_; }
  void set_code_range(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    code_lo_ = std::move(lo);
    code_hi_ = std::move(hi);
  }

  bool in_validated_range(const Eigen::Ref<const Eigen::VectorXd>& code) const {
    for (int r = 0; r < latent_dim(); ++r)
      if (code[r] < code_lo_[r] || code[r] > code_hi_[r]) return false;
    return true;
  }

  Eigen::MatrixXd standardize(const Eigen::MatrixXd& dlv_columns) const {
    return ((dlv_columns.array().log().colwise() - log_mean_.array()).colwise() / log_scale_.array()).matrix();
  }

  Eigen::MatrixXd destandardize_log(const Eigen::MatrixXd& z) const {
    return ((z.array().colwise() * log_scale_.array()).colwise() + log_mean_.array()).matrix();
  }

  friend nlohmann::json to_json(const Codec& c);
  friend Codec codec_from_json(const nlohmann::json& j, GridSpecPtr spec);

 private:
  GridSpecPtr spec_;
  CodecArchitecture arch_;
  Mlp encoder_, decoder_;
  Eigen::VectorXd log_mean_, log_scale_;
  Eigen::VectorXd code_lo_, code_hi_;
};

/// Codes for a batch of flattened grids (mn x n) -> l x n.
inline Eigen::MatrixXd encode_batch(const Codec& codec, const Eigen::MatrixXd& dlv_columns) {
  if (dlv_columns.rows() != codec.spec()->size()) throw DataError("encode: grid shape mismatch");
  if (!(dlv_columns.array() > 0.0).all()) throw DataError("encode: dlv entries must be positive");
  return codec.encoder().forward(codec.standardize(dlv_columns));
}

inline Eigen::VectorXd encode(const Codec& codec, const DlvGrid& dlv) {
  if (!dlv.spec || dlv.values.rows() != codec.spec()->m() || dlv.values.cols() != codec.spec()->n())
    throw DataError("encode: grid shape mismatch");
  return encode_batch(codec, Eigen::MatrixXd(flatten(dlv.values))).col(0);
}

/// Flattened DLV grids (mn x n) for a batch of codes (l x n).
inline Eigen::MatrixXd decode_batch(const Codec& codec, const Eigen::MatrixXd& codes) {
  Eigen::MatrixXd logs = codec.destandardize_log(codec.decoder().forward(codes));
  // Keeps exp() finite for codes far outside the data; no effect in range.
  logs = logs.array().min(std::log(50.0)).max(std::log(1e-8)).matrix();
  return logs.array().exp().matrix();
}

inline DlvGrid decode(const Codec& codec, const Eigen::VectorXd& code) {
  if (code.size() != codec.latent_dim()) throw std::invalid_argument("decode: code length mismatch");
  const Eigen::MatrixXd flat = decode_batch(codec, Eigen::MatrixXd(code));
  return DlvGrid(codec.spec(), unflatten(flat.col(0), codec.spec()->m(), codec.spec()->n()));
}

/// Mean squared log-DLV reconstruction error over a batch of grids.
inline double reconstruction_loss(const Codec& codec, const Eigen::MatrixXd& dlv_columns) {
  const Eigen::MatrixXd z = codec.standardize(dlv_columns);
  const Eigen::MatrixXd out = codec.decoder().forward(codec.encoder().forward(z));
  const Eigen::MatrixXd diff = ((out - z).array().colwise() * codec.log_scale().array()).matrix();
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

/// Trains encoder and decoder jointly on log-DLV reconstruction with a
/// chronological split and early stopping. Sets the validated code range.
inline FitReport fit_autoencoder(Codec& codec, const Eigen::MatrixXd& dlv_columns, const FitConfig& cfg) {
  const Eigen::Index total = dlv_columns.cols();
  if (total == 0) throw DataError("fit_autoencoder: empty dataset");
  if (dlv_columns.rows() != codec.spec()->size()) throw DataError("fit_autoencoder: grid shape mismatch");
  const Eigen::Index n_train = training_split(total, cfg.validation_fraction);
  const Eigen::MatrixXd z_all = codec.standardize(dlv_columns);
  const Eigen::MatrixXd z_train = z_all.leftCols(n_train);
  const Eigen::MatrixXd valid = dlv_columns.rightCols(total - n_train);
  const Eigen::ArrayXd scale2 = codec.log_scale().array().square();
  const double mn = static_cast<double>(codec.spec()->size());

  OptimizerState opt_enc(cfg.adam, codec.encoder().parameter_count());
  OptimizerState opt_dec(cfg.adam, codec.decoder().parameter_count());
  Eigen::VectorXd best_enc = codec.encoder().params(), best_dec = codec.decoder().params();

  FitReport report;
  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(n_train);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  double lr_scale = 1.0;
  MlpCache enc_cache, dec_cache;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const auto count = static_cast<Eigen::Index>(std::min(bs, order.size() - b));
      Eigen::MatrixXd zb(z_train.rows(), count);
      for (Eigen::Index c = 0; c < count; ++c) zb.col(c) = z_train.col(order[b + c]);
      const Eigen::MatrixXd code = codec.encoder().forward(zb, enc_cache);
      const Eigen::MatrixXd out = codec.decoder().forward(code, dec_cache);
      const Eigen::MatrixXd diff = out - zb;
      const double norm = mn * static_cast<double>(count);
      epoch_loss += ((diff.array().square().colwise() * scale2).sum() / norm) * static_cast<double>(count);
      const Eigen::MatrixXd dout = ((2.0 / norm) * (diff.array().colwise() * scale2)).matrix();
      Eigen::VectorXd g_dec = Eigen::VectorXd::Zero(codec.decoder().parameter_count());
      Eigen::VectorXd g_enc = Eigen::VectorXd::Zero(codec.encoder().parameter_count());
      Eigen::MatrixXd dcode;
      codec.decoder().backward(dec_cache, dout, g_dec, &dcode);
      codec.encoder().backward(enc_cache, dcode, g_enc);
      const double gnorm = std::sqrt(g_dec.squaredNorm() + g_enc.squaredNorm());
      if (!std::isfinite(gnorm)) throw ConvergenceError("fit_autoencoder: gradient diverged");
      if (cfg.adam.clip_norm > 0.0 && gnorm > cfg.adam.clip_norm) {
        g_dec *= cfg.adam.clip_norm / gnorm;
        g_enc *= cfg.adam.clip_norm / gnorm;
      }
      adam_step(opt_dec, codec.decoder().params(), g_dec, lr_scale);
      adam_step(opt_enc, codec.encoder().params(), g_enc, lr_scale);
    }
    lr_scale *= cfg.lr_decay;
    const double vloss = reconstruction_loss(codec, valid);
    if (!std::isfinite(vloss)) throw ConvergenceError("fit_autoencoder: validation loss diverged");
    report.train_loss.push_back(epoch_loss / static_cast<double>(n_train));
    report.validation_loss.push_back(vloss);
    if (vloss < report.best_validation_loss) {
      report.best_validation_loss = vloss;
      report.best_epoch = epoch;
      best_enc = codec.encoder().params();
      best_dec = codec.decoder().params();
    }
    report.best_so_far.push_back(report.best_validation_loss);
    report.epochs_run = epoch + 1;
    if (epoch + 1 >= cfg.min_epochs && epoch - report.best_epoch >= cfg.patience) break;
  }
  codec.encoder().params() = best_enc;
  codec.decoder().params() = best_dec;
  const Eigen::MatrixXd codes = codec.encoder().forward(z_all);
  codec.set_code_range(codes.rowwise().minCoeff(), codes.rowwise().maxCoeff());
  return report;
}

inline nlohmann::json to_json(const Codec& c) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["format"] = "rnsim-codec";
  j["version"] = kCheckpointVersion;
  j["latent_dim"] = c.arch_.latent_dim;
  j["hidden"] = c.arch_.hidden;
  j["activation"] = to_string(c.arch_.activation);
  j["log_mean"] = vec(c.log_mean_);
  j["log_scale"] = vec(c.log_scale_);
  j["code_lo"] = vec(c.code_lo_);
  j["code_hi"] = vec(c.code_hi_);
  j["encoder"] = to_json(c.encoder_);
  j["decoder"] = to_json(c.decoder_);
  return j;
}

inline Codec codec_from_json(const nlohmann::json& j, GridSpecPtr spec) {
  if (j.value("format", "") != "rnsim-codec") throw DataError("checkpoint: not a codec record");
  if (j.value("version", 0) != kCheckpointVersion) throw DataError("checkpoint: unsupported codec version");
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  Codec c;
  c.spec_ = std::move(spec);
  c.arch_.latent_dim = j.at("latent_dim").get<int>();
  c.arch_.hidden = j.at("hidden").get<std::vector<int>>();
  c.arch_.activation = activation_from_string(j.at("activation").get<std::string>());
  c.log_mean_ = vec(j.at("log_mean"));
  c.log_scale_ = vec(j.at("log_scale"));
  c.code_lo_ = vec(j.at("code_lo"));
  c.code_hi_ = vec(j.at("code_hi"));
  c.encoder_ = mlp_from_json(j.at("encoder"));
  c.decoder_ = mlp_from_json(j.at("decoder"));
  const int mn = c.spec_->size();
  if (c.log_mean_.size() != mn || c.encoder_.input_dim() != mn || c.decoder_.output_dim() != mn ||
      c.encoder_.output_dim() != c.arch_.latent_dim || c.decoder_.input_dim() != c.arch_.latent_dim)
    throw DataError("checkpoint: codec shape does not match grid spec");
  return c;
}

}  // namespace rnsim

#endif  // RNSIM_MANIFOLD_CODEC_HPP

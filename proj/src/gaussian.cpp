#include "mdood/gaussian.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <thread>
#include <vector>

#include "mdood/errors.hpp"
#include "mdood/parallel.hpp"

namespace mdood {

GaussianAccumulator::GaussianAccumulator(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("feature dimension must be >= 1");
  if (dim >= kMaxFeatureDim) {
    throw ValidationError("feature dimension " + std::to_string(dim) + " is at or above the limit of " +
                          std::to_string(kMaxFeatureDim) +
                          "; lower the projection budget");
  }
}

void GaussianAccumulator::add(std::span<const double> sample) {
  if (sample.size() != dim_) {
    throw DimensionMismatch("sample " + std::to_string(count()) + " has dimension " +
                            std::to_string(sample.size()) + ", expected " + std::to_string(dim_));
  }
  for (double v : sample) {
    if (!std::isfinite(v)) {
      throw NumericError("sample " + std::to_string(count()) + " has a non-finite component");
    }
  }
  if (block_.size() == 0) block_.resize(static_cast<Eigen::Index>(dim_), kBlockSize);
  block_.col(static_cast<Eigen::Index>(buffered_)) =
      Eigen::Map<const Eigen::VectorXd>(sample.data(), static_cast<Eigen::Index>(dim_));
  if (++buffered_ == kBlockSize) flush();
}

void GaussianAccumulator::flush() {
  if (buffered_ == 0) return;
  auto x = block_.leftCols(static_cast<Eigen::Index>(buffered_));
  const Eigen::VectorXd block_mean = x.rowwise().mean();
  x.colwise() -= block_mean;
  const std::size_t n = buffered_;
  buffered_ = 0;
  fold(n, block_mean, x);
}

void GaussianAccumulator::fold(std::size_t n, const Eigen::VectorXd& mean,
                               const Eigen::Ref<const Eigen::MatrixXd>& centred) {
  const auto d = static_cast<Eigen::Index>(dim_);
  if (m2_.size() == 0) m2_ = Eigen::MatrixXd::Zero(d, d);
  m2_.selfadjointView<Eigen::Lower>().rankUpdate(centred);
  if (count_ == 0) {
    mean_ = mean;
    count_ = n;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(n);
  const double total = na + nb;
  const Eigen::VectorXd delta = mean - mean_;
  m2_.selfadjointView<Eigen::Lower>().rankUpdate(delta, na * nb / total);
  mean_ += delta * (nb / total);
  count_ += n;
}

void GaussianAccumulator::merge(GaussianAccumulator&& other) {
  if (other.dim_ != dim_) {
    throw DimensionMismatch("cannot merge accumulators of dimension " + std::to_string(dim_) +
                            " and " + std::to_string(other.dim_));
  }
  flush();
  other.flush();
  if (other.count_ == 0) return;
  if (count_ == 0) {
    count_ = other.count_;
    mean_ = std::move(other.mean_);
    m2_ = std::move(other.m2_);
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double total = na + nb;
  const Eigen::VectorXd delta = other.mean_ - mean_;
  m2_.triangularView<Eigen::Lower>() += other.m2_;
  m2_.selfadjointView<Eigen::Lower>().rankUpdate(delta, na * nb / total);
  mean_ += delta * (nb / total);
  count_ += other.count_;
  other = GaussianAccumulator(dim_);
}

GaussianModel GaussianAccumulator::finalize(const FitOptions& options) && {
  flush();
  if (count_ < 2) {
    throw ValidationError("at least two training samples are required, got " +
                          std::to_string(count_));
  }
  GaussianModel model;
  model.dim = dim_;
  model.n_samples = count_;
  model.mu = std::move(mean_);
  model.sigma = std::move(m2_);
  model.sigma /= static_cast<double>(count_);
  const auto d = static_cast<Eigen::Index>(dim_);
  for (Eigen::Index j = 1; j < d; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) model.sigma(i, j) = model.sigma(j, i);
  }
  model.feature_tap = options.feature_tap;
  model.pool_steps = options.pool_steps;
  block_ = Eigen::MatrixXd();
  factorize(model, options.eps_scale);
  return model;
}

void factorize(GaussianModel& model, double eps_scale) {
  if (!(eps_scale >= 0.0) || !std::isfinite(eps_scale)) {
    throw ValidationError("eps_scale must be a finite non-negative number");
  }
  if (!model.sigma.allFinite()) throw NumericError("covariance has non-finite entries");
  const double d = static_cast<double>(model.dim);
  double base = model.sigma.trace() / d;
  // A zero-variance training set still needs a usable regulariser.
  if (!(base > 0.0) || !std::isfinite(base)) base = 1.0;
  double eps = eps_scale * base;

  constexpr int kEscalations = 3;
  for (int attempt = 0; attempt <= kEscalations; ++attempt, eps *= 10.0) {
    model.chol = model.sigma;
    model.chol.diagonal().array() += eps;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>, Eigen::Lower> llt(model.chol);
    if (llt.info() == Eigen::Success && model.chol.diagonal().minCoeff() > 0.0) {
      model.chol.triangularView<Eigen::StrictlyUpper>().setZero();
      model.eps = eps;
      model.eps_scale = eps_scale;
      return;
    }
  }
  model.chol = Eigen::MatrixXd();
  throw NumericError("covariance is not positive definite even after diagonal loading of " +
                     std::to_string(eps / 10.0));
}

namespace {

constexpr std::size_t kMaxPartials = 8;

template <typename GetColumn>
GaussianModel fit_columns(std::size_t n, std::size_t d, GetColumn&& column,
                          const FitOptions& options) {
  if (n < 2) {
    throw ValidationError("at least two training samples are required, got " + std::to_string(n));
  }
  // Validates d before any allocation.
  GaussianAccumulator first(d);

  const std::size_t blocks = (n + GaussianAccumulator::kBlockSize - 1) / GaussianAccumulator::kBlockSize;
  // The split into partial accumulators depends only on n and d, never on
  // the worker count, so the fitted model is bitwise reproducible. Every
  // partial owns a d x d scatter matrix; keep them under about 1 GiB.
  const double bytes_per_partial = 8.0 * static_cast<double>(d) * static_cast<double>(d);
  const auto memory_cap =
      static_cast<std::size_t>(std::max(1.0, std::floor(1073741824.0 / bytes_per_partial)));
  const std::size_t parts = std::max<std::size_t>(1, std::min({kMaxPartials, blocks, memory_cap}));

  std::vector<GaussianAccumulator> partials;
  partials.push_back(std::move(first));
  for (std::size_t w = 1; w < parts; ++w) partials.emplace_back(d);

  parallel_for(parts, options.workers, [&](std::size_t w) {
    const std::size_t begin = n * w / parts;
    const std::size_t end = n * (w + 1) / parts;
    for (std::size_t i = begin; i < end; ++i) {
      std::span<const double> z = column(i);
      if (z.size() != d) {
        throw DimensionMismatch("sample " + std::to_string(i) + " has dimension " +
                                std::to_string(z.size()) + ", expected " + std::to_string(d));
      }
      partials[w].add(z);
    }
  });
  for (std::size_t w = 1; w < parts; ++w) partials[0].merge(std::move(partials[w]));
  return std::move(partials[0]).finalize(options);
}

}  // namespace

GaussianModel fit(std::span<const ProjectedFeature> samples, const FitOptions& options) {
  if (samples.size() < 2) {
    throw ValidationError("at least two training samples are required, got " +
                          std::to_string(samples.size()));
  }
  return fit_columns(
      samples.size(), samples.front().dim(),
      [&](std::size_t i) { return std::span<const double>(samples[i].vector); }, options);
}

GaussianModel fit(const Eigen::Ref<const Eigen::MatrixXd>& samples, const FitOptions& options) {
  const auto d = static_cast<std::size_t>(samples.rows());
  return fit_columns(
      static_cast<std::size_t>(samples.cols()), d,
      [&](std::size_t i) {
        return std::span<const double>(samples.col(static_cast<Eigen::Index>(i)).data(), d);
      },
      options);
}

void ensure_tap(const GaussianModel& model, const std::string& tap) {
  if (model.feature_tap != tap) throw TapMismatch(model.feature_tap, tap);
}

// ---------------------------------------------------------------------------
// Model container:
//   "MHGM" | u32 version | u64 n_samples | u64 dim | f64 eps | f64 eps_scale |
//   i64 pool_steps | u32 tap length | tap bytes | tensor mu | tensor sigma |
//   tensor chol
// Matrices are stored as row-major [d, d] f64 tensor records.

namespace {

constexpr std::array<char, 4> kModelMagic = {'M', 'H', 'G', 'M'};

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  std::array<char, 8> buf;
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), bytes);
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  const auto d = static_cast<std::size_t>(m.rows());
  write_tensor_header(out, DType::kF64, {d, static_cast<std::size_t>(m.cols())});
  std::vector<double> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Map<Eigen::RowVectorXd>(row.data(), m.cols()) = m.row(i);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
}

class HeaderReader {
 public:
  HeaderReader(std::istream& in, std::uint64_t size) : in_(in), size_(size) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return size_ - pos_; }

  void bytes(char* dst, std::uint64_t n) {
    if (n > remaining()) {
      throw ParseError(ParseError::Kind::kTruncatedHeader, size_,
                       "model header needs " + std::to_string(n) + " more bytes");
    }
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n) {
      throw ParseError(ParseError::Kind::kTruncatedHeader,
                       pos_ + static_cast<std::uint64_t>(in_.gcount()), "unexpected end of file");
    }
    pos_ += n;
  }

  std::uint64_t le(int n) {
    std::array<unsigned char, 8> buf{};
    bytes(reinterpret_cast<char*>(buf.data()), static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[static_cast<std::size_t>(i)];
    return v;
  }

  Tensor tensor() {
    const std::uint64_t start = pos_;
    Tensor t = read_tensor(in_, start, remaining());
    pos_ += tensor_header_size(t.ndim()) + t.byte_size();
    return t;
  }

 private:
  std::istream& in_;
  std::uint64_t size_;
  std::uint64_t pos_ = 0;
};

Eigen::MatrixXd to_matrix(const Tensor& t, std::size_t d, std::uint64_t offset, const char* what) {
  if (t.dtype() != DType::kF64 || t.shape() != Shape{d, d}) {
    throw ParseError(ParseError::Kind::kBadShape, offset,
                     std::string(what) + " must be f64 [d, d], got " + to_string(t.dtype()) + " " +
                         shape_to_string(t.shape()));
  }
  const auto n = static_cast<Eigen::Index>(d);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(t.values<double>().data(), n, n);
}

}  // namespace

void save_model(const GaussianModel& model, const std::filesystem::path& path) {
  const auto d = static_cast<Eigen::Index>(model.dim);
  if (model.mu.size() != d || model.sigma.rows() != d || model.sigma.cols() != d ||
      model.chol.rows() != d || model.chol.cols() != d) {
    throw ValidationError("model fields are inconsistent with dim " + std::to_string(model.dim));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kModelMagic.data(), kModelMagic.size());
  put_le(out, kModelFormatVersion, 4);
  put_le(out, model.n_samples, 8);
  put_le(out, model.dim, 8);
  put_le(out, std::bit_cast<std::uint64_t>(model.eps), 8);
  put_le(out, std::bit_cast<std::uint64_t>(model.eps_scale), 8);
  put_le(out, static_cast<std::uint64_t>(static_cast<std::int64_t>(model.pool_steps)), 8);
  put_le(out, model.feature_tap.size(), 4);
  out.write(model.feature_tap.data(), static_cast<std::streamsize>(model.feature_tap.size()));
  write_tensor(Tensor({model.dim}, std::vector<double>(model.mu.data(), model.mu.data() + d)), out);
  write_matrix(out, model.sigma);
  write_matrix(out, model.chol);
  out.flush();
  if (!out) throw IoError("failed writing model '" + path.string() + "'");
}

GaussianModel load_model(const std::filesystem::path& path,
                         const std::optional<std::string>& expected_tap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);

  GaussianModel model;
  try {
    HeaderReader r(in, size);
    std::array<char, 4> magic;
    r.bytes(magic.data(), magic.size());
    if (magic != kModelMagic) {
      throw ParseError(ParseError::Kind::kBadMagic, 0, "not a model file (expected \"MHGM\")");
    }
    const auto version = static_cast<std::uint32_t>(r.le(4));
    if (version != kModelFormatVersion) {
      throw ParseError(ParseError::Kind::kVersionMismatch, 4,
                       "model format version " + std::to_string(version) + ", this build reads " +
                           std::to_string(kModelFormatVersion));
    }
    model.n_samples = r.le(8);
    const std::uint64_t dim_offset = r.offset();
    model.dim = r.le(8);
    if (model.dim == 0 || model.dim >= kMaxFeatureDim) {
      throw ParseError(ParseError::Kind::kBadShape, dim_offset,
                       "dimension " + std::to_string(model.dim) + " out of range");
    }
    model.eps = std::bit_cast<double>(r.le(8));
    model.eps_scale = std::bit_cast<double>(r.le(8));
    model.pool_steps = static_cast<int>(static_cast<std::int64_t>(r.le(8)));
    const std::uint64_t tap_len = r.le(4);
    model.feature_tap.resize(static_cast<std::size_t>(std::min(tap_len, r.remaining())));
    r.bytes(model.feature_tap.data(), tap_len);

    const std::uint64_t mu_offset = r.offset();
    const Tensor mu = r.tensor();
    if (mu.dtype() != DType::kF64 || mu.shape() != Shape{model.dim}) {
      throw ParseError(ParseError::Kind::kBadShape, mu_offset, "mu must be f64 [d]");
    }
    model.mu = Eigen::Map<const Eigen::VectorXd>(mu.values<double>().data(),
                                                 static_cast<Eigen::Index>(model.dim));
    const std::uint64_t sigma_offset = r.offset();
    model.sigma = to_matrix(r.tensor(), model.dim, sigma_offset, "sigma");
    const std::uint64_t chol_offset = r.offset();
    model.chol = to_matrix(r.tensor(), model.dim, chol_offset, "chol");
    if (r.remaining() != 0) {
      throw ParseError(ParseError::Kind::kTrailingBytes, r.offset(),
                       std::to_string(r.remaining()) + " unexpected bytes after model");
    }
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.offset(), e.detail() + " (in '" + path.string() + "')");
  }
  if (expected_tap) ensure_tap(model, *expected_tap);
  return model;
}

}  // namespace mdood

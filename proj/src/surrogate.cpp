#include "hidegate/surrogate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "hidegate/error.hpp"
#include "hidegate/parallel.hpp"

namespace hidegate {

namespace {

constexpr char kMagic[4] = {'W', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 16;

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF),
                         static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += a[d] * b[d];
  return s;
}

double dot(std::span<const float> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += static_cast<double>(a[d]) * b[d];
  return s;
}

void require_nonempty(const EmbeddedSequence& s, const char* what) {
  if (s.empty()) fail(ErrorKind::empty_input, std::string(what) + " sequence is empty");
}

// Total order used to fix summation order for pairwise_sim.
bool canonical_less(const EmbeddedSequence& a, const EmbeddedSequence& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto va = a.vec(i), vb = b.vec(i);
    for (std::size_t d = 0; d < va.size(); ++d) {
      if (va[d] != vb[d]) return va[d] < vb[d];
    }
  }
  return false;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t vocab_size, std::size_t dim,
                                 std::vector<float> data)
    : vocab_size_(vocab_size), dim_(dim), data_(std::move(data)) {
  if (dim_ == 0 || vocab_size_ == 0) {
    fail(ErrorKind::format, "embedding matrix must have non-zero size");
  }
  if (data_.size() != vocab_size_ * dim_) {
    fail(ErrorKind::format, "embedding matrix holds " + std::to_string(data_.size()) +
                                " floats, expected " + std::to_string(vocab_size_ * dim_));
  }
  norms_.resize(vocab_size_);
  eligible_.assign(vocab_size_, true);
  for (std::size_t w = 0; w < vocab_size_; ++w) {
    double s = 0.0;
    for (float x : row(static_cast<TokenId>(w))) {
      if (!std::isfinite(x)) {
        fail(ErrorKind::format, "non-finite entry in embedding row " + std::to_string(w));
      }
      s += static_cast<double>(x) * x;
    }
    norms_[w] = std::sqrt(s);
    if (norms_[w] == 0.0) eligible_[w] = false;
  }
}

void EmbeddingMatrix::set_eligible(TokenId id, bool value) {
  eligible_.at(id) = value && norms_.at(id) > 0.0;
}

void EmbeddingMatrix::restrict_to_printable(const Vocabulary& vocab) {
  if (vocab.size() != vocab_size_) {
    fail(ErrorKind::asset_consistency,
         "vocabulary has " + std::to_string(vocab.size()) +
             " pieces but embedding matrix has " + std::to_string(vocab_size_) + " rows");
  }
  for (std::size_t w = 0; w < vocab_size_; ++w) {
    if (!vocab.is_printable(static_cast<TokenId>(w))) eligible_[w] = false;
  }
}

std::size_t EmbeddingMatrix::eligible_count() const {
  return static_cast<std::size_t>(std::count(eligible_.begin(), eligible_.end(), true));
}

EmbeddingMatrix EmbeddingMatrix::read_wemb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::format, path.string() + ": missing WEMB header");
  }
  const std::uint32_t version = read_u32_le(bytes.data() + 4);
  if (version != kVersion) {
    fail(ErrorKind::format, path.string() + ": unsupported WEMB version " + std::to_string(version));
  }
  const std::size_t vocab = read_u32_le(bytes.data() + 8);
  const std::size_t dim = read_u32_le(bytes.data() + 12);
  const std::size_t expected = kHeaderBytes + vocab * dim * 4;
  if (bytes.size() != expected) {
    fail(ErrorKind::format, path.string() + ": file is " + std::to_string(bytes.size()) +
                                " bytes, header implies " + std::to_string(expected));
  }
  std::vector<float> data(vocab * dim);
  for (std::size_t k = 0; k < data.size(); ++k) {
    data[k] = std::bit_cast<float>(read_u32_le(bytes.data() + kHeaderBytes + 4 * k));
  }
  return EmbeddingMatrix(vocab, dim, std::move(data));
}

void EmbeddingMatrix::write_wemb(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(kMagic, 4);
  write_u32_le(out, kVersion);
  write_u32_le(out, static_cast<std::uint32_t>(vocab_size_));
  write_u32_le(out, static_cast<std::uint32_t>(dim_));
  for (float x : data_) write_u32_le(out, std::bit_cast<std::uint32_t>(x));
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

EmbeddedSequence EmbeddedSequence::from_vectors(
    const std::vector<std::vector<double>>& vectors) {
  EmbeddedSequence s;
  if (vectors.empty()) return s;
  s.dim_ = vectors.front().size();
  s.data_.reserve(vectors.size() * s.dim_);
  for (const auto& v : vectors) {
    if (v.size() != s.dim_) fail(ErrorKind::dimension_mismatch, "ragged token vectors");
    double n = std::sqrt(dot(v, v));
    if (n == 0.0) fail(ErrorKind::degenerate_embedding, "zero token vector");
    s.data_.insert(s.data_.end(), v.begin(), v.end());
    s.norms_.push_back(n);
  }
  return s;
}

void EmbeddedSequence::set_vec(std::size_t i, std::span<const double> v) {
  if (i >= size()) fail(ErrorKind::index_out_of_range, "position out of range");
  if (v.size() != dim_) fail(ErrorKind::dimension_mismatch, "vector dimension mismatch");
  std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
  norms_[i] = std::sqrt(dot(v, v));
  if (norms_[i] == 0.0) fail(ErrorKind::degenerate_embedding, "zero token vector");
  ids_.clear();
}

EmbeddedSequence embed_sequence(const TokenSequence& seq, const EmbeddingMatrix& matrix) {
  if (seq.empty()) fail(ErrorKind::empty_input, "cannot embed an empty sequence");
  EmbeddedSequence s;
  s.dim_ = matrix.dim();
  s.data_.reserve(seq.size() * s.dim_);
  s.norms_.reserve(seq.size());
  for (TokenId id : seq.ids) {
    if (id >= matrix.vocab_size()) {
      fail(ErrorKind::invalid_id, "token id " + std::to_string(id) +
                                      " out of range for embedding matrix");
    }
    if (matrix.norm(id) == 0.0) {
      fail(ErrorKind::degenerate_embedding,
           "token " + std::to_string(id) + " has an all-zero embedding row");
    }
    for (float x : matrix.row(id)) s.data_.push_back(x);
    s.norms_.push_back(matrix.norm(id));
  }
  s.ids_ = seq.ids;
  return s;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  return dot(a, b) / (na * nb);
}

double pairwise_sim(const EmbeddedSequence& a, const EmbeddedSequence& b) {
  require_nonempty(a, "left");
  require_nonempty(b, "right");
  if (a.dim() != b.dim()) fail(ErrorKind::dimension_mismatch, "sequence dimensions differ");
  const EmbeddedSequence& x = canonical_less(b, a) ? b : a;
  const EmbeddedSequence& y = &x == &a ? b : a;
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      total += dot(x.vec(i), y.vec(j)) / (x.norm(i) * y.norm(j));
    }
  }
  return total / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

std::vector<double> grad_wrt_position(const EmbeddedSequence& a, const EmbeddedSequence& b,
                                      std::size_t i) {
  require_nonempty(b, "right");
  if (i >= a.size()) {
    fail(ErrorKind::index_out_of_range, "position " + std::to_string(i) +
                                            " out of range for length " + std::to_string(a.size()));
  }
  const std::size_t m = a.dim();
  const auto ai = a.vec(i);
  const double na = a.norm(i);
  std::vector<double> g(m, 0.0);
  for (std::size_t j = 0; j < b.size(); ++j) {
    const auto bj = b.vec(j);
    const double nb = b.norm(j);
    const double c = dot(ai, bj) / (na * nb);
    for (std::size_t d = 0; d < m; ++d) {
      g[d] += bj[d] / (na * nb) - c * ai[d] / (na * na);
    }
  }
  const double scale = 1.0 / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  for (double& x : g) x *= scale;
  return g;
}

std::vector<double> direction_grad(const EmbeddedSequence& a, const EmbeddedSequence& b,
                                   std::size_t i) {
  require_nonempty(b, "right");
  if (i >= a.size()) {
    fail(ErrorKind::index_out_of_range, "position " + std::to_string(i) +
                                            " out of range for length " + std::to_string(a.size()));
  }
  std::vector<double> g(a.dim(), 0.0);
  for (std::size_t j = 0; j < b.size(); ++j) {
    const auto bj = b.vec(j);
    const double nb = b.norm(j);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] += bj[d] / nb;
  }
  const double scale = 1.0 / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  for (double& x : g) x *= scale;
  return g;
}

SubstitutionTable::SubstitutionTable(const EmbeddingMatrix& matrix,
                                     std::span<const EmbeddedSequence> targets)
    : matrix_(&matrix) {
  const std::size_t k_count = targets.size();
  target_lengths_.reserve(k_count);
  // Unit directions of every target token, concatenated.
  std::vector<double> units;
  std::vector<std::size_t> owner;
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto& t = targets[k];
    require_nonempty(t, "target");
    if (t.dim() != matrix.dim()) fail(ErrorKind::dimension_mismatch, "target dimension differs");
    target_lengths_.push_back(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) {
      for (double x : t.vec(j)) units.push_back(x / t.norm(j));
      owner.push_back(k);
    }
  }
  const std::size_t vocab = matrix.vocab_size();
  const std::size_t m = matrix.dim();
  table_.assign(vocab * k_count, 0.0);
  parallel_for(
      vocab,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t w = begin; w < end; ++w) {
          const auto row = matrix.row(static_cast<TokenId>(w));
          const double nw = matrix.norm(static_cast<TokenId>(w));
          if (nw == 0.0) continue;
          double* out = table_.data() + w * k_count;
          for (std::size_t t = 0; t < owner.size(); ++t) {
            out[owner[t]] += dot(row, std::span<const double>(units.data() + t * m, m)) / nw;
          }
        }
      },
      0, 256);
}

std::vector<double> SubstitutionTable::sims(const TokenSequence& seq) const {
  const std::size_t k_count = num_targets();
  std::vector<double> out(k_count, 0.0);
  for (TokenId id : seq.ids) {
    for (std::size_t k = 0; k < k_count; ++k) out[k] += contribution(id, k);
  }
  for (std::size_t k = 0; k < k_count; ++k) {
    out[k] /= static_cast<double>(seq.size()) * static_cast<double>(target_lengths_[k]);
  }
  return out;
}

std::vector<double> SubstitutionTable::substituted_sims(const TokenSequence& seq,
                                                        std::size_t i) const {
  if (i >= seq.size()) fail(ErrorKind::index_out_of_range, "position out of range");
  const std::size_t k_count = num_targets();
  std::vector<double> base(k_count, 0.0);
  for (std::size_t p = 0; p < seq.size(); ++p) {
    if (p == i) continue;
    for (std::size_t k = 0; k < k_count; ++k) base[k] += contribution(seq[p], k);
  }
  std::vector<double> denom(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    denom[k] = static_cast<double>(seq.size()) * static_cast<double>(target_lengths_[k]);
  }
  const std::size_t vocab = matrix_->vocab_size();
  std::vector<double> out(vocab * k_count);
  for (std::size_t w = 0; w < vocab; ++w) {
    for (std::size_t k = 0; k < k_count; ++k) {
      out[w * k_count + k] = (base[k] + contribution(static_cast<TokenId>(w), k)) / denom[k];
    }
  }
  return out;
}

std::vector<double> candidate_delta_scores(const EmbeddedSequence& a, std::size_t i,
                                           std::span<const EmbeddedSequence> targets,
                                           std::span<const double> weights,
                                           const EmbeddingMatrix& matrix) {
  if (a.ids().size() != a.size()) {
    fail(ErrorKind::invalid_id, "candidate scoring needs a sequence built from token ids");
  }
  if (weights.size() != targets.size()) {
    fail(ErrorKind::dimension_mismatch, "one weight per target is required");
  }
  if (i >= a.size()) fail(ErrorKind::index_out_of_range, "position out of range");
  SubstitutionTable table(matrix, targets);
  const auto sims = table.substituted_sims(TokenSequence{a.ids()}, i);
  const std::size_t k_count = targets.size();
  std::vector<double> scores(matrix.vocab_size());
  for (std::size_t w = 0; w < scores.size(); ++w) {
    if (!matrix.eligible(static_cast<TokenId>(w))) {
      scores[w] = std::numeric_limits<double>::infinity();
      continue;
    }
    double s = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) s += weights[k] * sims[w * k_count + k];
    scores[w] = s;
  }
  return scores;
}

std::vector<float> mean_pool(const TokenSequence& seq, const EmbeddingMatrix& matrix) {
  if (seq.empty()) fail(ErrorKind::empty_input, "cannot pool an empty sequence");
  std::vector<double> acc(matrix.dim(), 0.0);
  for (TokenId id : seq.ids) {
    if (id >= matrix.vocab_size()) fail(ErrorKind::invalid_id, "token id out of range");
    const auto row = matrix.row(id);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += row[d];
  }
  std::vector<float> out(acc.size());
  for (std::size_t d = 0; d < acc.size(); ++d) {
    out[d] = static_cast<float>(acc[d] / static_cast<double>(seq.size()));
  }
  return out;
}

}  // namespace hidegate

#include "pcdiff/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pcdiff/error.hpp"

namespace pcdiff {

using grad::Tensor;

namespace {

constexpr char kMagic[4] = {'P', 'C', 'D', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const Tensor& t) {
    u32(2);
    u32(static_cast<std::uint32_t>(t.rows()));
    u32(static_cast<std::uint32_t>(t.cols()));
    for (double v : t.data()) f64(v);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated reading ") + what, static_cast<std::int64_t>(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  Tensor tensor(const char* what) {
    const std::size_t at = pos_;
    const std::uint32_t rank = u32(what);
    if (rank != 2) throw FormatError("unsupported tensor rank " + std::to_string(rank), static_cast<std::int64_t>(at));
    const std::uint32_t rows = u32(what);
    const std::uint32_t cols = u32(what);
    need(static_cast<std::size_t>(rows) * cols * 8, what);
    Tensor t(rows, cols);
    for (double& v : t.data()) v = f64(what);
    return t;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

void write_widths(Writer& w, const std::vector<std::uint32_t>& widths) {
  w.u32(static_cast<std::uint32_t>(widths.size()));
  for (auto v : widths) w.u32(v);
}

std::vector<std::uint32_t> read_widths(Reader& r) {
  const std::uint32_t n = r.u32("width count");
  if (n > 64) throw FormatError("implausible layer count " + std::to_string(n), static_cast<std::int64_t>(r.offset()));
  std::vector<std::uint32_t> out(n);
  for (auto& v : out) v = r.u32("width");
  return out;
}

}  // namespace

std::string encode_checkpoint(const TrainState& state, bool include_optimizer) {
  const ModelConfig& c = state.model.config;
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(c.mode));
  w.u8(static_cast<std::uint8_t>(c.label_encoding));
  w.u8(c.beta_only ? 1 : 0);
  w.u32(c.num_classes);
  w.u32(c.latent_dim);
  w.u32(c.time_dim);
  write_widths(w, c.encoder_widths);
  write_widths(w, c.decoder_widths);
  w.f64(c.schedule.beta_start);
  w.f64(c.schedule.beta_end);
  w.u32(static_cast<std::uint32_t>(c.schedule.num_steps));

  const auto params = state.model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Tensor* p : params) w.tensor(*p);

  const bool has_opt = include_optimizer && !state.optimizer.m.empty();
  w.u8(has_opt ? 1 : 0);
  if (has_opt) {
    w.u64(state.step);
    w.f64(state.loss_ema);
    w.u64(state.optimizer.step);
    w.u32(static_cast<std::uint32_t>(state.optimizer.m.size()));
    for (const Tensor& t : state.optimizer.m) w.tensor(t);
    for (const Tensor& t : state.optimizer.v) w.tensor(t);
  }
  return w.take();
}

TrainState decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic", 0);
  }
  Reader r(bytes);
  r.u32("magic");
  if (const auto v = r.u32("version"); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), 4);
  }
  ModelConfig c;
  const auto mode = r.u8("mode");
  if (mode > 1) throw FormatError("bad mode byte " + std::to_string(mode), 8);
  c.mode = static_cast<DiffusionMode>(mode);
  const auto enc = r.u8("label encoding");
  if (enc > 1) throw FormatError("bad label encoding byte", 9);
  c.label_encoding = static_cast<LabelEncoding>(enc);
  c.beta_only = r.u8("beta_only") != 0;
  c.num_classes = r.u32("K");
  c.latent_dim = r.u32("d_z");
  c.time_dim = r.u32("d_t");
  c.encoder_widths = read_widths(r);
  c.decoder_widths = read_widths(r);
  c.schedule.beta_start = r.f64("beta_start");
  c.schedule.beta_end = r.f64("beta_end");
  c.schedule.num_steps = r.u32("num_steps");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }

  TrainState state;
  state.model = Model::init(c, 0);
  auto params = state.model.parameters();
  const std::size_t count_at = r.offset();
  if (r.u32("tensor count") != params.size()) {
    throw FormatError("tensor count does not match the configured architecture",
                      static_cast<std::int64_t>(count_at));
  }
  for (Tensor* p : params) {
    const std::size_t at = r.offset();
    Tensor t = r.tensor("parameter");
    if (t.shape() != p->shape()) {
      throw FormatError("parameter shape " + t.shape_str() + " expected " + p->shape_str(),
                        static_cast<std::int64_t>(at));
    }
    *p = std::move(t);
  }

  if (r.u8("optimizer flag") == 1) {
    state.step = r.u64("train step");
    state.loss_ema = r.f64("loss ema");
    state.optimizer.step = r.u64("adam step");
    const std::uint32_t n = r.u32("moment count");
    if (n != params.size()) throw FormatError("moment count mismatch", static_cast<std::int64_t>(r.offset()));
    for (std::uint32_t i = 0; i < n; ++i) state.optimizer.m.push_back(r.tensor("first moment"));
    for (std::uint32_t i = 0; i < n; ++i) state.optimizer.v.push_back(r.tensor("second moment"));
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint", static_cast<std::int64_t>(r.offset()));
  return state;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path, bool include_optimizer) {
  const std::string bytes = encode_checkpoint(state, include_optimizer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace pcdiff

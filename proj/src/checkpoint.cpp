#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vlg/trainer.hpp"

namespace vlg {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'G', 'C', 'K', 'P', 'T', '\0'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    bytes(t.data(), t.size() * sizeof(double));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1u << 30)) fail("implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Tensor tensor() {
    const std::uint64_t rank = u64();
    if (rank > 8) fail("implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    Tensor t = Tensor::zeros(shape);
    bytes(t.data(), t.size() * sizeof(double));
    return t;
  }
  [[noreturn]] void fail(const std::string& what) const { throw CheckpointError("checkpoint " + path_ + ": " + what); }

 private:
  std::istream& in_;
  std::string path_;
};

std::string rng_text(const Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

Rng rng_from(const std::string& text, const Reader& r) {
  Rng rng;
  std::istringstream s(text);
  s >> rng;
  if (!s) r.fail("corrupt generator state");
  return rng;
}

}  // namespace

void Trainer::save(const std::string& path) const {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint " + path + ": cannot open for writing");
    Writer w(out);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.str(model_.config.to_text());
    w.u64(model_.vocab_size);
    w.u64(model_.raw_dim);
    w.u64(state_.epoch);
    w.u64(state_.step);
    w.str(rng_text(state_.shuffle_rng));
    w.str(rng_text(state_.lang_rng));
    w.str(rng_text(state_.vis_rng));
    const auto& params = model_.store.all();
    w.u64(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      w.str(params[i].name);
      w.tensor(params[i].value);
      w.tensor(adam_.state.m[i]);
      w.tensor(adam_.state.v[i]);
      w.u64(adam_.state.steps[i]);
    }
    w.bytes(kTrailer, sizeof kTrailer);
    out.flush();
    if (!out) throw CheckpointError("checkpoint " + path + ": write failed");
  }
  fs::rename(tmp, target);
}

Trainer Trainer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint " + path + ": cannot open");
  Reader r(in, path);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const TrainConfig config = TrainConfig::parse(r.str());
  const std::uint64_t vocab = r.u64(), raw = r.u64();
  Trainer t(config, vocab, raw);
  t.state_.epoch = r.u64();
  t.state_.step = r.u64();
  t.state_.shuffle_rng = rng_from(r.str(), r);
  t.state_.lang_rng = rng_from(r.str(), r);
  t.state_.vis_rng = rng_from(r.str(), r);
  const std::uint64_t count = r.u64();
  if (count != t.model_.store.size()) {
    r.fail("holds " + std::to_string(count) + " parameters, config builds " + std::to_string(t.model_.store.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Parameter& p = t.model_.store[i];
    if (name != p.name) r.fail("parameter " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
    Tensor value = r.tensor(), m = r.tensor(), v = r.tensor();
    if (value.shape() != p.value.shape() || m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      r.fail("shape mismatch for " + name);
    }
    p.value = std::move(value);
    t.adam_.state.m[i] = std::move(m);
    t.adam_.state.v[i] = std::move(v);
    t.adam_.state.steps[i] = r.u64();
  }
  char trailer[sizeof kTrailer];
  r.bytes(trailer, sizeof trailer);
  if (std::memcmp(trailer, kTrailer, sizeof trailer) != 0) r.fail("missing trailer");
  return t;
}

}  // namespace vlg

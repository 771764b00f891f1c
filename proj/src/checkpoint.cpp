#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "vdanlg/generator.hpp"

namespace vdanlg {

namespace {

constexpr std::array<char, 8> kMagic = {'V', 'D', 'A', 'N', 'L', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, n);
  }

  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 24)) throw CheckpointError("checkpoint: string too long");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    check();
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }

  void check() {
    if (!in_) throw CheckpointError("checkpoint: unexpected end of file");
  }

  std::istream& in_;
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const ModelConfig& cfg = ckpt.model.config();
  if (cfg.vocab_size != ckpt.vocab.size()) {
    throw CheckpointError("checkpoint: model vocabulary size " +
                          std::to_string(cfg.vocab_size) +
                          " differs from vocabulary " +
                          std::to_string(ckpt.vocab.size()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out.write(kMagic.data(), kMagic.size());
  Writer w(out);
  w.u32(kVersion);
  w.u64(cfg.d_h);
  w.u64(cfg.d_z);
  w.u64(cfg.d_e);
  w.u64(cfg.dc_hidden);
  w.u64(ckpt.vocab.hash());
  w.u64(ckpt.train_steps);
  w.u64(ckpt.vocab.size());
  for (const auto& t : ckpt.vocab.tokens()) w.str(t);
  const auto params = ckpt.model.params().all();
  w.u64(params.size());
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.u64(d);
    for (double v : p->value.values()) w.f64(v);
  }
  if (!out) throw CheckpointError("error writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) {
    throw CheckpointError(path + " is not a checkpoint file");
  }
  Reader r(in);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  ModelConfig cfg;
  cfg.d_h = r.u64();
  cfg.d_z = r.u64();
  cfg.d_e = r.u64();
  cfg.dc_hidden = r.u64();
  const std::uint64_t vocab_hash = r.u64();
  Checkpoint ckpt;
  ckpt.train_steps = r.u64();
  const std::uint64_t vocab_size = r.u64();
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < vocab_size; ++i) tokens.push_back(r.str());
  if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<bos>" ||
      tokens[2] != "<eos>" || tokens[3] != "<unk>") {
    throw CheckpointError("checkpoint vocabulary lacks reserved tokens");
  }
  ckpt.vocab = corpus::Vocab(
      std::vector<std::string>(tokens.begin() + 4, tokens.end()));
  if (ckpt.vocab.size() != vocab_size || ckpt.vocab.hash() != vocab_hash) {
    throw CheckpointError("checkpoint vocab hash mismatch");
  }
  cfg.vocab_size = vocab_size;
  try {
    ckpt.model = Model(cfg);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint header: ") + e.what());
  }
  const std::uint64_t count = r.u64();
  if (count != ckpt.model.params().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " tensors, model expects " +
                          std::to_string(ckpt.model.params().size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    if (!ckpt.model.params().contains(name)) {
      throw CheckpointError("unexpected tensor in checkpoint: " + name);
    }
    auto& p = ckpt.model.params().get(name);
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64());
    if (shape != p.value.shape()) {
      throw CheckpointError("tensor " + name + " has shape " +
                            ad::shape_string(shape) + ", expected " +
                            p.value.shape_string());
    }
    for (auto& v : p.value.values()) v = r.f64();
  }
  return ckpt;
}

}  // namespace vdanlg

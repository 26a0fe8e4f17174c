#include "glit/io.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "glit/errors.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'L', 'I', 'T'};
constexpr char kDatasetMagic[4] = {'G', 'L', 'D', 'S'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }
  const std::string& buffer() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  // `what` names the record being read for the error message.
  void need(std::size_t n, const std::string& what) const {
    if (in_.size() - pos_ < n) {
      throw CorruptionError("file truncated in " + what + ": needs " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos_) + ", " +
                            std::to_string(in_.size() - pos_) + " left");
    }
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le(const std::string& what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64(const std::string& what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  const std::string& buffer() const { return in_; }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(const char* p, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(p, n);
  return crc.checksum();
}

std::string meta_text(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint metadata '" + k + "' contains '=' or a newline");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

const std::string& meta_at(const Checkpoint& ckpt, const std::string& key) {
  const auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

void require_kind(const Checkpoint& ckpt, const std::string& kind) {
  if (meta_at(ckpt, "kind") != kind) {
    throw FormatError("checkpoint holds a " + meta_at(ckpt, "kind") + ", expected a " + kind);
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint16_t>(kCheckpointVersion);
  const std::string meta = meta_text(ckpt.meta);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > UINT16_MAX) throw ConfigError("tensor name too long: " + name);
    const std::size_t start = w.size();
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(kDtypeF64);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) w.le<std::uint64_t>(e);
    for (double v : t.data()) w.f64(v);
    w.le<std::uint32_t>(crc32(w.buffer().data() + start, w.size() - start));
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic");
  }
  r.bytes(4, "header");
  const auto version = r.le<std::uint16_t>("header");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const auto meta_len = r.le<std::uint32_t>("header");
  std::istringstream meta(r.bytes(meta_len, "metadata"));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptionError("metadata line without '=': " + line);
    ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.le<std::uint32_t>("header");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = r.le<std::uint16_t>(where);
    const std::string name = r.bytes(name_len, where);
    const std::string label = "tensor '" + name + "'";
    const auto dtype = r.le<std::uint8_t>(label);
    if (dtype != kDtypeF64) {
      throw CorruptionError(label + " has unknown dtype " + std::to_string(dtype));
    }
    const auto rank = r.le<std::uint8_t>(label);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>(label)));
      if (shape.back() == 0) throw CorruptionError(label + " has a zero extent");
      if (numel > r.remaining() / shape.back()) {
        throw CorruptionError(label + " claims more data than the file holds");
      }
      numel *= shape.back();
    }
    r.need(numel * 8, label);
    std::vector<double> data(numel);
    for (double& v : data) v = r.f64(label);
    const std::uint32_t expect = crc32(bytes.data() + start, r.pos() - start);
    if (r.le<std::uint32_t>(label) != expect) throw CorruptionError(label + " fails its checksum");
    ckpt.tensors.push_back({name, Tensor::from(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) {
    throw CorruptionError(std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  return ckpt;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = fs::path(path + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

Checkpoint model_checkpoint(const GlitModel& model) {
  Checkpoint c;
  c.meta["kind"] = "model";
  c.meta["model"] = model.config().to_string();
  c.meta["genotype"] = model.genotype().to_string();
  c.meta["optimizer"] = "none";
  for (const auto& p : model.params()) c.tensors.push_back({p.name, p.tensor});
  return c;
}

GlitModel model_from_checkpoint(const Checkpoint& ckpt) {
  require_kind(ckpt, "model");
  const ModelConfig cfg = ModelConfig::parse(meta_at(ckpt, "model"));
  const Genotype g = Genotype::parse(meta_at(ckpt, "genotype"));
  ModelWeights loaded = allocate_weights(cfg, g, false);
  ParamList dst = named_params(loaded);
  if (dst.size() != ckpt.tensors.size()) {
    throw FormatError("model checkpoint has " + std::to_string(ckpt.tensors.size()) +
                      " tensors, genotype needs " + std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& src = ckpt.tensors[i];
    if (src.name != dst[i].name || src.tensor.shape() != dst[i].tensor.shape()) {
      throw FormatError("checkpoint tensor '" + src.name + "' " + shape_str(src.tensor.shape()) +
                        " does not match '" + dst[i].name + "' " + shape_str(dst[i].tensor.shape()));
    }
    const auto data = src.tensor.data();
    std::copy(data.begin(), data.end(), dst[i].tensor.mutable_data().begin());
  }
  return GlitModel::from_weights(cfg, g, loaded);
}

Checkpoint supernet_checkpoint(const Supernet& sn) {
  Checkpoint c;
  c.meta["kind"] = "supernet";
  c.meta["model"] = sn.config().to_string();
  c.meta["space"] = sn.space().to_string();
  c.meta["optimizer"] = "none";
  for (const auto& p : sn.params()) c.tensors.push_back({p.name, p.tensor});
  return c;
}

Supernet supernet_from_checkpoint(const Checkpoint& ckpt) {
  require_kind(ckpt, "supernet");
  const ModelConfig cfg = ModelConfig::parse(meta_at(ckpt, "model"));
  const SearchSpaceSpec space = SearchSpaceSpec::parse(meta_at(ckpt, "space"));
  Rng rng(0);
  Supernet sn = Supernet::build(cfg, space, rng);
  try {
    sn.load(ckpt.tensors);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("supernet checkpoint does not match its space: ") + e.what());
  }
  return sn;
}

std::string encode_dataset(const Dataset& ds) {
  Writer w;
  w.bytes(kDatasetMagic, 4);
  w.le<std::uint16_t>(kDatasetVersion);
  if (ds.size() > UINT32_MAX) throw ConfigError("dataset too large for the file format");
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  for (int v : {ds.channels, ds.width, ds.height, ds.num_classes}) {
    if (v < 0 || v > UINT16_MAX) throw ConfigError("dataset dimension out of u16 range");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(v));
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(ds.labels[i]));
    const auto img = ds.image(i);
    w.bytes(img.data(), img.size());
  }
  return w.take();
}

Dataset decode_dataset(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kDatasetMagic, 4) != 0) {
    throw FormatError("not a dataset file: bad magic");
  }
  Reader r(bytes);
  r.bytes(4, "header");
  const auto version = r.le<std::uint16_t>("header");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  const std::uint64_t count = r.le<std::uint32_t>("header");
  ds.channels = r.le<std::uint16_t>("header");
  ds.width = r.le<std::uint16_t>("header");
  ds.height = r.le<std::uint16_t>("header");
  ds.num_classes = r.le<std::uint16_t>("header");
  const std::uint64_t record = 2 + static_cast<std::uint64_t>(ds.image_bytes());
  const std::uint64_t expect = r.pos() + count * record;
  if (bytes.size() != expect) {
    throw CorruptionError("dataset header implies " + std::to_string(expect) + " bytes, file has " +
                          std::to_string(bytes.size()));
  }
  ds.pixels.reserve(count * ds.image_bytes());
  ds.labels.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const int label = r.le<std::uint16_t>("sample");
    if (label >= ds.num_classes) {
      throw CorruptionError("sample " + std::to_string(i) + " has label " + std::to_string(label) +
                            " but the file declares " + std::to_string(ds.num_classes) + " classes");
    }
    ds.labels.push_back(label);
    const std::string img = r.bytes(ds.image_bytes(), "sample");
    ds.pixels.insert(ds.pixels.end(), img.begin(), img.end());
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  write_file_atomic(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace glit

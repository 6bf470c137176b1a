#include "qbf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "qbf/error.hpp"

namespace qbf {

namespace {

constexpr char kMagic[4] = {'Q', 'B', 'F', '1'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw LengthError(std::string("checkpoint truncated at offset ") + std::to_string(pos_) + " reading " + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store, const ModelArch& arch, ParameterView view) {
  Writer w;
  w.raw(kMagic, 4);
  w.str(nlohmann::json(arch).dump());
  const auto params = store.list_parameters(view);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.u64(d);
    for (double v : p.tensor.data()) w.f64(v);
  }
  const auto& spec = store.quantizer();
  w.u8(spec ? 1 : 0);
  if (spec) {
    w.u8(static_cast<std::uint8_t>(spec->kind));
    w.u32(static_cast<std::uint32_t>(spec->bits));
    w.u32(static_cast<std::uint32_t>(spec->learnables.size()));
    for (const auto& l : spec->learnables) {
      w.str(l.name);
      w.f64(l.initial);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint has bad magic at offset 0 (expected QBF1)");
  }
  for (int i = 0; i < 4; ++i) r.u8("magic");

  Checkpoint ck;
  const std::size_t arch_at = r.offset();
  const std::string arch_text = r.str("arch");
  try {
    ck.arch = nlohmann::json::parse(arch_text).get<ModelArch>();
  } catch (const std::exception& e) {
    throw FormatError("checkpoint arch block at offset " + std::to_string(arch_at) + " is invalid: " + e.what());
  }

  struct Record {
    std::string name;
    Tensor tensor;
  };
  std::vector<Record> records;
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    std::string name = r.str("record name");
    const std::uint32_t rank = r.u32("record rank");
    if (rank > 8) throw FormatError("record '" + name + "' at offset " + std::to_string(at) + " has rank " +
                                    std::to_string(rank));
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u64("record dims");
      if (d != 0 && numel > (bytes.size() / 8) / d) {
        throw LengthError("record '" + name + "' at offset " + std::to_string(at) + " is larger than the file");
      }
      numel *= d;
    }
    r.need(numel * 8, "record payload");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64("record payload");
    records.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values), true)});
  }

  std::optional<QuantizerSpec> spec;
  const std::size_t q_at = r.offset();
  const std::uint8_t has_q = r.u8("quantizer flag");
  if (has_q > 1) throw FormatError("bad quantizer flag at offset " + std::to_string(q_at));
  if (has_q) {
    QuantizerSpec s;
    const std::uint8_t kind = r.u8("quantizer kind");
    if (kind > 2) throw FormatError("unknown quantizer kind " + std::to_string(kind) + " at offset " + std::to_string(q_at + 1));
    s.kind = static_cast<QuantizerKind>(kind);
    s.bits = static_cast<int>(r.u32("quantizer bits"));
    const std::uint32_t n = r.u32("learnable count");
    if (n > 16) throw FormatError("implausible learnable count at offset " + std::to_string(r.offset() - 4));
    for (std::uint32_t i = 0; i < n; ++i) {
      LearnableParam p;
      p.name = r.str("learnable name");
      p.initial = r.f64("learnable value");
      s.learnables.push_back(p);
    }
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw FormatError(std::string("quantizer block at offset ") + std::to_string(q_at) + ": " + e.what());
    }
    spec = s;
  }
  if (r.offset() != bytes.size()) {
    throw FormatError("trailing bytes after offset " + std::to_string(r.offset()));
  }

  if (spec) ck.store.attach_quantizer(*spec);
  for (auto& rec : records) {
    if (rec.name.rfind(kQuantParamPrefix, 0) == 0) {
      if (!spec) throw FormatError("record '" + rec.name + "' without a quantizer block");
      Tensor& dst = ck.store.get(rec.name);
      if (dst.shape() != rec.tensor.shape()) throw FormatError("record '" + rec.name + "' has the wrong shape");
      std::copy(rec.tensor.data().begin(), rec.tensor.data().end(), dst.mutable_data().begin());
    } else {
      try {
        ck.store.add(rec.name, rec.tensor);
      } catch (const StateError& e) {
        throw FormatError(e.what());
      }
    }
  }

  // Shapes must agree with the architecture.
  const ParameterStore expected = init_model(ck.arch, 0);
  const auto want = expected.list_parameters();
  const auto got = ck.store.list_parameters();
  if (want.size() != got.size()) {
    throw FormatError("checkpoint holds " + std::to_string(got.size()) + " parameters, arch needs " +
                      std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != got[i].name || want[i].tensor.shape() != got[i].tensor.shape()) {
      throw FormatError("checkpoint parameter '" + got[i].name + "' " + shape_str(got[i].tensor.shape()) +
                        " does not match arch parameter '" + want[i].name + "' " +
                        shape_str(want[i].tensor.shape()));
    }
  }
  return ck;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const ModelArch& arch,
                     ParameterView view) {
  write_file_bytes(path, encode_checkpoint(store, arch, view));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace qbf

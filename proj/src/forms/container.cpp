#include "forms/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace forms {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& in, const char* what) : in_(in), what_(what) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> raw(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  void expect_end() const {
    if (pos_ != in_.size()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Status::corrupt_artifact, std::string(what_) + ": " + msg);
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail("truncated");
  }
  const std::vector<std::uint8_t>& in_;
  const char* what_;
  std::size_t pos_ = 0;
};

NamedTensor from_doubles(std::string name, std::vector<std::uint32_t> dims, const std::vector<double>& v) {
  NamedTensor t{std::move(name), std::move(dims), {}};
  t.values.reserve(v.size());
  for (double d : v) t.values.push_back(static_cast<float>(d));
  return t;
}

NamedTensor from_mask(std::string name, const std::vector<std::uint8_t>& m) {
  NamedTensor t{std::move(name), {static_cast<std::uint32_t>(m.size())}, {}};
  for (auto b : m) t.values.push_back(b ? 1.0f : 0.0f);
  return t;
}

std::vector<std::uint32_t> dims32(const std::vector<std::size_t>& shape) {
  return {shape.begin(), shape.end()};
}

std::vector<double> to_doubles(const NamedTensor& t, std::size_t expected) {
  if (t.values.size() != expected)
    throw Error(Status::corrupt_artifact, "tensor " + t.name + " has " + std::to_string(t.values.size()) +
                                              " values, expected " + std::to_string(expected));
  return {t.values.begin(), t.values.end()};
}

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors) {
  Writer w;
  w.bytes("FRMS", 4);
  w.u32(container_version);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.values.size()) throw ShapeError("tensor " + t.name + ": dims do not match payload");
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float f : t.values) w.f32(f);
  }
  return w.take();
}

std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "weight container");
  if (r.str(4) != "FRMS") r.fail("bad magic");
  if (const auto v = r.u32(); v != container_version) r.fail("unsupported version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u32());
    if (r.u32() != 0) r.fail("unsupported dtype in " + t.name);
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("rank too large in " + t.name);
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
      if (n > bytes.size()) r.fail("payload larger than file in " + t.name);
    }
    t.values.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) t.values.push_back(r.f32());
    out.push_back(std::move(t));
  }
  r.expect_end();
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw Error(Status::corrupt_artifact, "missing tensor " + name);
}

std::vector<NamedTensor> model_tensors(const CompressedModel& model) {
  std::vector<NamedTensor> out;
  const auto wl = model.graph.weighted_layers();
  for (std::size_t i = 0; i < wl.size(); ++i) {
    const Layer& l = model.graph.layers[wl[i]];
    const LayerCompression& lc = model.layers.at(i);
    out.push_back(from_doubles(l.name + ".weight", dims32(l.weight.shape), l.weight.values));
    out.push_back(from_doubles(l.name + ".bias", {static_cast<std::uint32_t>(l.bias.size())}, l.bias));
    out.push_back(from_doubles(l.name + ".scale", {1}, {lc.quant_scale}));
    out.push_back(from_mask(l.name + ".row_mask", lc.mask.rows));
    out.push_back(from_mask(l.name + ".col_mask", lc.mask.cols));
  }
  return out;
}

CompressedModel model_from_tensors(const std::vector<NamedTensor>& tensors, const ModelGraph& architecture,
                                   const CompressionConfig& config, bool polarized, bool quantized) {
  CompressedModel cm = CompressedModel::identity(architecture, config);
  cm.polarized = polarized;
  cm.quantized = quantized;
  const auto wl = cm.graph.weighted_layers();
  for (std::size_t i = 0; i < wl.size(); ++i) {
    Layer& l = cm.graph.layers[wl[i]];
    LayerCompression& lc = cm.layers[i];
    const NamedTensor& w = find_tensor(tensors, l.name + ".weight");
    if (w.dims != dims32(l.weight.shape))
      throw Error(Status::corrupt_artifact, "tensor " + w.name + " has the wrong shape for the model");
    l.weight.values = to_doubles(w, l.weight.values.size());
    l.bias = to_doubles(find_tensor(tensors, l.name + ".bias"), l.bias.size());
    lc.quant_scale = to_doubles(find_tensor(tensors, l.name + ".scale"), 1)[0];
    auto mask = [&](const std::string& suffix, std::size_t n) {
      const auto v = to_doubles(find_tensor(tensors, l.name + suffix), n);
      std::vector<std::uint8_t> m;
      for (double d : v) m.push_back(d != 0.0 ? 1 : 0);
      return m;
    };
    lc.mask.rows = mask(".row_mask", l.weight.filter_size());
    lc.mask.cols = mask(".col_mask", l.weight.filters());
    lc.layout = make_layout(l.weight.shape, cm.order, cm.fragment_size, lc.mask.rows);
  }
  return cm;
}

std::vector<NamedTensor> state_tensors(const AdmmState& state, const ModelGraph& model) {
  state.check_shapes(model);
  std::vector<NamedTensor> out;
  const auto wl = model.weighted_layers();
  for (std::size_t i = 0; i < wl.size(); ++i) {
    const Layer& l = model.layers[wl[i]];
    out.push_back(from_doubles(l.name + ".Z", dims32(l.weight.shape), state.z[i]));
    out.push_back(from_doubles(l.name + ".U", dims32(l.weight.shape), state.u[i]));
    out.push_back(from_doubles(l.name + ".rho", {1}, {state.rho[i]}));
  }
  return out;
}

AdmmState state_from_tensors(const std::vector<NamedTensor>& tensors, const ModelGraph& model) {
  AdmmState s;
  for (std::size_t li : model.weighted_layers()) {
    const Layer& l = model.layers[li];
    s.z.push_back(to_doubles(find_tensor(tensors, l.name + ".Z"), l.weight.values.size()));
    s.u.push_back(to_doubles(find_tensor(tensors, l.name + ".U"), l.weight.values.size()));
    s.rho.push_back(to_doubles(find_tensor(tensors, l.name + ".rho"), 1)[0]);
  }
  return s;
}

std::vector<std::uint8_t> encode_signs(const CompressedModel& model) {
  Writer w;
  w.bytes("FSGN", 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& lc : model.layers) {
    w.u32(static_cast<std::uint32_t>(lc.name.size()));
    w.bytes(lc.name.data(), lc.name.size());
    w.u32(static_cast<std::uint32_t>(lc.layout.fragment_count()));
    const auto bits = pack_signs(lc.layout);
    w.bytes(bits.data(), bits.size());
  }
  return w.take();
}

void decode_signs(const std::vector<std::uint8_t>& bytes, CompressedModel& model) {
  Reader r(bytes, "sign bitmap");
  if (r.str(4) != "FSGN") r.fail("bad magic");
  if (r.u32() != 1) r.fail("unsupported version");
  if (r.u32() != model.layers.size()) r.fail("layer count does not match the model");
  for (auto& lc : model.layers) {
    if (r.str(r.u32()) != lc.name) r.fail("layer order does not match the model");
    const std::uint32_t n = r.u32();
    if (n != lc.layout.fragment_count())
      r.fail(lc.name + ": " + std::to_string(n) + " fragments, layout has " +
             std::to_string(lc.layout.fragment_count()));
    const auto bits = r.raw((n + 7) / 8);
    unpack_signs(lc.layout, bits);
  }
  r.expect_end();
}

}  // namespace forms

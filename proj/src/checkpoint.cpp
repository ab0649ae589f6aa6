#include "sosuq/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "sosuq/errors.hpp"
#include "sosuq/knots.hpp"
#include "sosuq/tensor.hpp"

namespace sosuq {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

Tensor vec_tensor(const std::vector<double>& v) {
  Tensor t(Dtype::f64, {static_cast<uint64_t>(v.size())});
  t.values = v;
  return t;
}

/// Empty parameter container with the shapes recorded in the meta tensor;
/// filled by unflatten.
VnParams shell_from_meta(const Tensor& meta, uint64_t seed, int64_t iteration) {
  if (meta.values.size() < 15) throw IoError("checkpoint: meta section too short");
  const auto& m = meta.values;
  VnParams p;
  p.grid.nx = static_cast<int>(m[0]);
  p.grid.nz = static_cast<int>(m[1]);
  p.grid.pitch_x = m[2];
  p.grid.pitch_z = m[3];
  p.grid.origin_x = m[4];
  p.grid.origin_z = m[5];
  p.n_layers = static_cast<int>(m[6]);
  p.n_filters = static_cast<int>(m[7]);
  p.kernel_size = static_cast<int>(m[8]);
  p.n_knots = static_cast<int>(m[9]);
  p.knot_range = m[10];
  p.slowness_scale = m[11];
  p.delay_scale = m[12];
  p.c0 = m[13];
  int n_lattice = static_cast<int>(m[14]);
  p.train_seed = seed;
  p.train_iterations = iteration;

  size_t taps = static_cast<size_t>(p.kernel_size) * static_cast<size_t>(p.kernel_size);
  size_t npix = static_cast<size_t>(p.grid.npix());
  p.layers.resize(static_cast<size_t>(p.n_layers));
  for (auto& layer : p.layers) {
    layer.filters.assign(static_cast<size_t>(p.n_filters), std::vector<double>(taps, 0.0));
    layer.reg_weights.assign(static_cast<size_t>(p.n_filters), std::vector<double>(npix, 0.0));
    layer.reg_activations.assign(static_cast<size_t>(p.n_filters),
                                 KnotFunction(p.n_knots, p.knot_range));
    layer.data_weights.assign(static_cast<size_t>(n_lattice), 0.0);
    layer.data_activation = KnotFunction(p.n_knots, p.knot_range);
  }
  return p;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainSnapshot& snap) {
  snap.params.validate();
  bool has_posterior = snap.mode == TrainMode::bvi;
  if (has_posterior) snap.posterior.validate();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  out.push_back(static_cast<char>(snap.mode));
  out.push_back(has_posterior ? 1 : 0);
  out.push_back(snap.adam_m.empty() ? 0 : 1);
  out.push_back(0);
  put_u64(out, snap.seed);
  put_u64(out, static_cast<uint64_t>(snap.iteration));

  std::vector<std::pair<std::string, std::string>> sections;

  Tensor meta(Dtype::f64, {16});
  const VnParams& p = snap.params;
  meta.values = {static_cast<double>(p.grid.nx),
                 static_cast<double>(p.grid.nz),
                 p.grid.pitch_x,
                 p.grid.pitch_z,
                 p.grid.origin_x,
                 p.grid.origin_z,
                 static_cast<double>(p.n_layers),
                 static_cast<double>(p.n_filters),
                 static_cast<double>(p.kernel_size),
                 static_cast<double>(p.n_knots),
                 p.knot_range,
                 p.slowness_scale,
                 p.delay_scale,
                 p.c0,
                 static_cast<double>(p.layers.front().data_weights.size()),
                 0.0};
  sections.emplace_back("meta", tensor_to_bytes(meta));

  std::vector<double> flat;
  flatten(p, flat);
  sections.emplace_back("flat", tensor_to_bytes(vec_tensor(flat)));

  if (has_posterior) {
    size_t taps2 = static_cast<size_t>(snap.posterior.block_dim) *
                   static_cast<size_t>(snap.posterior.block_dim);
    Tensor blocks(Dtype::f64,
                  {static_cast<uint64_t>(snap.posterior.n_blocks), static_cast<uint64_t>(taps2)});
    for (size_t b = 0; b < snap.posterior.d_blocks.size(); ++b)
      std::copy(snap.posterior.d_blocks[b].begin(), snap.posterior.d_blocks[b].end(),
                blocks.values.begin() + static_cast<long>(b * taps2));
    sections.emplace_back("dblocks", tensor_to_bytes(blocks));
  }
  if (!snap.adam_m.empty()) {
    sections.emplace_back("adam_m", tensor_to_bytes(vec_tensor(snap.adam_m)));
    sections.emplace_back("adam_v", tensor_to_bytes(vec_tensor(snap.adam_v)));
  }
  sections.emplace_back("config", snap.config_echo);

  put_u32(out, static_cast<uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u64(out, payload.size());
    out.append(payload);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed: " + path.string());
}

TrainSnapshot load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(buf);
  if (r.bytes(4) != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic");
  uint32_t version = r.u32();
  if (version != kVersion) throw IoError("checkpoint: unsupported version");
  uint8_t mode_tag = static_cast<uint8_t>(r.bytes(1)[0]);
  if (mode_tag > 2) throw IoError("checkpoint: bad mode tag");
  bool has_posterior = r.bytes(1)[0] != 0;
  bool has_adam = r.bytes(1)[0] != 0;
  r.bytes(1);
  uint64_t seed = r.u64();
  int64_t iteration = static_cast<int64_t>(r.u64());
  uint32_t n_sections = r.u32();

  std::map<std::string, std::string> sec;
  for (uint32_t i = 0; i < n_sections; ++i) {
    uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    uint64_t payload_len = r.u64();
    sec[name] = r.bytes(static_cast<size_t>(payload_len));
  }
  if (r.pos != buf.size()) throw IoError("checkpoint: trailing bytes");

  auto need = [&](const std::string& name) -> const std::string& {
    auto it = sec.find(name);
    if (it == sec.end()) throw IoError("checkpoint: missing section " + name);
    return it->second;
  };

  TrainSnapshot snap;
  snap.mode = static_cast<TrainMode>(mode_tag);
  snap.iteration = iteration;
  snap.seed = seed;

  Tensor meta = tensor_from_bytes(need("meta"));
  snap.params = shell_from_meta(meta, seed, iteration);
  Tensor flat = tensor_from_bytes(need("flat"));
  unflatten(snap.params, flat.values);
  snap.params.validate();

  if (has_posterior) {
    Tensor blocks = tensor_from_bytes(need("dblocks"));
    if (blocks.dims.size() != 2) throw IoError("checkpoint: dblocks must be rank 2");
    snap.posterior.params = snap.params;
    snap.posterior.n_blocks = static_cast<int>(blocks.dims[0]);
    snap.posterior.block_dim = static_cast<int>(std::sqrt(static_cast<double>(blocks.dims[1])));
    size_t taps2 = blocks.dims[1];
    snap.posterior.d_blocks.assign(static_cast<size_t>(blocks.dims[0]),
                                   std::vector<double>(taps2));
    for (size_t b = 0; b < snap.posterior.d_blocks.size(); ++b)
      std::copy(blocks.values.begin() + static_cast<long>(b * taps2),
                blocks.values.begin() + static_cast<long>((b + 1) * taps2),
                snap.posterior.d_blocks[b].begin());
    snap.posterior.validate();
  }
  if (has_adam) {
    snap.adam_m = tensor_from_bytes(need("adam_m")).values;
    snap.adam_v = tensor_from_bytes(need("adam_v")).values;
  }
  snap.config_echo = need("config");
  return snap;
}

} // namespace sosuq

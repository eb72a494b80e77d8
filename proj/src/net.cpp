#include "ccv/net.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ccv/rng.hpp"

namespace ccv {

namespace {

int head_channels(const ArchDesc& a) { return std::max(1, a.base_channels / 2); }

void validate_arch(const ArchDesc& a) {
  if (a.levels < 2) throw std::invalid_argument("arch: levels must be >= 2");
  if (a.base_channels < 2) throw std::invalid_argument("arch: base_channels must be >= 2");
  const int div = 1 << a.levels;
  if (a.image_side < 2 * div || a.image_side % div != 0)
    throw std::invalid_argument("arch: image_side must be a multiple of " +
                                std::to_string(div) + " and at least " +
                                std::to_string(2 * div));
}

template <typename T>
void validate_inputs(const ModelWeights<T>& w, const Tensor<T>& query,
                     const ContextSet<T>& ctx) {
  const int s = w.arch.image_side;
  if (ctx.empty()) throw std::invalid_argument("forward: empty context set");
  if (query.rank() != 3 || query.dim(0) != 1)
    throw std::invalid_argument("forward: query must be [1,H,W], got " + query.shape_str());
  if (query.dim(1) != s || query.dim(2) != s)
    throw std::invalid_argument("forward: query side " + std::to_string(query.dim(1)) + "x" +
                                std::to_string(query.dim(2)) +
                                " does not match model image_side " + std::to_string(s));
  for (size_t n = 0; n < ctx.size(); ++n) {
    const auto& p = ctx[n];
    if (p.image.rank() != 3 || p.image.dim(0) != 1 || !p.image.same_shape(query))
      throw std::invalid_argument("forward: context image " + std::to_string(n) +
                                  " has shape " + p.image.shape_str() + ", expected " +
                                  query.shape_str());
    if (!p.mask.same_shape(p.image))
      throw std::invalid_argument("forward: context mask " + std::to_string(n) +
                                  " has shape " + p.mask.shape_str() + ", expected " +
                                  p.image.shape_str());
  }
}

// Encoder pass shared by forward_logits and encode_query. Query/pair
// features per level are written to the skip lists; on return q/v hold the
// bottleneck features.
template <typename T>
void run_encoder(Graph<T>& g, const ModelWeights<T>& w, Tensor<T>& q,
                 std::vector<Tensor<T>>& v, std::vector<Tensor<T>>* skip_q,
                 std::vector<std::vector<Tensor<T>>>* skip_v) {
  const int levels = w.arch.levels;
  for (int l = 0; l < levels; ++l) {
    const auto& kw = w.at("enc" + std::to_string(l) + ".w");
    const auto& kb = w.at("enc" + std::to_string(l) + ".b");
    std::vector<Tensor<T>> z(v.size());
    for (size_t n = 0; n < v.size(); ++n)
      z[n] = g.relu(g.conv2d(g.concat_channels(q, v[n]), kw, kb, 1));
    q = g.mean_stack(z);
    v = std::move(z);
    if (skip_q) skip_q->push_back(q);
    if (skip_v) skip_v->push_back(v);
    if (l + 1 < levels) {
      q = g.avgpool2(q);
      for (auto& vn : v) vn = g.avgpool2(vn);
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, std::vector<int>>> parameter_spec(const ArchDesc& arch) {
  validate_arch(arch);
  const int c = arch.base_channels;
  const int hc = head_channels(arch);
  std::vector<std::pair<std::string, std::vector<int>>> spec;
  for (int l = 0; l < arch.levels; ++l) {
    const int in = l == 0 ? 3 : 2 * c;
    spec.push_back({"enc" + std::to_string(l) + ".w", {c, in, 3, 3}});
    spec.push_back({"enc" + std::to_string(l) + ".b", {c}});
  }
  for (int l = arch.levels - 2; l >= 0; --l) {
    spec.push_back({"dec" + std::to_string(l) + ".w", {c, 4 * c, 1, 1}});
    spec.push_back({"dec" + std::to_string(l) + ".b", {c}});
  }
  spec.push_back({"head.w", {hc, c + 1, 3, 3}});
  spec.push_back({"head.b", {hc}});
  spec.push_back({"out.w", {1, hc, 1, 1}});
  spec.push_back({"out.b", {1}});
  return spec;
}

template <typename T>
ModelWeights<T> ModelWeights<T>::random_init(const ArchDesc& arch, uint64_t seed) {
  ModelWeights<T> w;
  w.arch = arch;
  SplitMix64 rng(derive_seed(seed, 0xAC5EEDull));
  for (const auto& [name, shape] : parameter_spec(arch)) {
    Tensor<T> t(shape);
    if (shape.size() == 4) {
      // He-normal with conv fan-in.
      const double fan_in = double(shape[1]) * shape[2] * shape[3];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data()) v = static_cast<T>(rng.gauss() * stddev);
    }
    // Biases stay zero.
    w.params.emplace(name, std::move(t));
  }
  return w;
}

template <typename T>
Tensor<T> forward_logits(Graph<T>& g, const ModelWeights<T>& w, const Tensor<T>& query,
                         const ContextSet<T>& ctx) {
  validate_arch(w.arch);
  validate_inputs(w, query, ctx);
  const int levels = w.arch.levels;

  Tensor<T> q = g.avgpool2(query);
  std::vector<Tensor<T>> v;
  v.reserve(ctx.size());
  for (const auto& p : ctx) v.push_back(g.avgpool2(g.concat_channels(p.image, p.mask)));

  std::vector<Tensor<T>> skip_q;
  std::vector<std::vector<Tensor<T>>> skip_v;
  run_encoder(g, w, q, v, &skip_q, &skip_v);

  for (int l = levels - 2; l >= 0; --l) {
    const auto& kw = w.at("dec" + std::to_string(l) + ".w");
    const auto& kb = w.at("dec" + std::to_string(l) + ".b");
    Tensor<T> qu = g.concat_channels(g.upsample2(q), skip_q[l]);
    std::vector<Tensor<T>> z(v.size());
    for (size_t n = 0; n < v.size(); ++n) {
      Tensor<T> vu = g.concat_channels(g.upsample2(v[n]), skip_v[l][n]);
      z[n] = g.relu(g.conv2d(g.concat_channels(qu, vu), kw, kb, 0));
    }
    q = g.mean_stack(z);
    v = std::move(z);
  }

  Tensor<T> h = g.relu(g.conv2d(g.concat_channels(g.upsample2(q), query), w.at("head.w"),
                                w.at("head.b"), 1));
  return g.conv2d(h, w.at("out.w"), w.at("out.b"), 0);
}

template <typename T>
Tensor<T> forward(Graph<T>& g, const ModelWeights<T>& w, const Tensor<T>& query,
                  const ContextSet<T>& ctx) {
  return g.sigmoid(forward_logits(g, w, query, ctx));
}

template <typename T>
std::vector<T> encode_query(const ModelWeights<T>& w, const Tensor<T>& image) {
  Graph<T> g;
  Tensor<T> q = g.avgpool2(image);
  std::vector<Tensor<T>> v{g.avgpool2(g.concat_channels(image, Tensor<T>(image.shape())))};
  run_encoder<T>(g, w, q, v, nullptr, nullptr);
  const int c = q.dim(0);
  const int64_t hw = int64_t(q.dim(1)) * q.dim(2);
  std::vector<T> feat(c);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0;
    for (int64_t i = 0; i < hw; ++i) s += q.ptr()[ch * hw + i];
    feat[ch] = static_cast<T>(s / double(hw));
  }
  return feat;
}

namespace {

constexpr char kMagic[4] = {'C', 'C', 'V', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.append(b, 4);
}

struct Reader {
  const std::string& s;
  size_t pos = 0;
  void need(size_t n, const char* what) {
    if (pos + n > s.size())
      throw std::runtime_error(std::string("corrupt checkpoint: truncated ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = uint32_t(uint8_t(s[pos])) | uint32_t(uint8_t(s[pos + 1])) << 8 |
                 uint32_t(uint8_t(s[pos + 2])) << 16 | uint32_t(uint8_t(s[pos + 3])) << 24;
    pos += 4;
    return v;
  }
};

}  // namespace

std::string checkpoint_bytes(const ModelWeights<float>& w) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, uint32_t(w.arch.levels));
  put_u32(out, uint32_t(w.arch.base_channels));
  put_u32(out, uint32_t(w.arch.image_side));
  put_u32(out, uint32_t(w.params.size()));
  for (const auto& [name, t] : w.params) {
    put_u32(out, uint32_t(name.size()));
    out.append(name);
    put_u32(out, uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, uint32_t(t.dim(i)));
    static_assert(sizeof(float) == 4);
    const size_t off = out.size();
    out.resize(off + 4 * size_t(t.numel()));
    std::memcpy(out.data() + off, t.ptr(), 4 * size_t(t.numel()));
  }
  return out;
}

void save_checkpoint(const ModelWeights<float>& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\" for writing");
  const std::string bytes = checkpoint_bytes(w);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed for \"" + path + "\"");
}

ModelWeights<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\"");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint: bad magic in \"" + path + "\"");
  Reader r{bytes, 4};
  const uint32_t version = r.u32("version");
  if (version != kVersion)
    throw std::runtime_error("unsupported version " + std::to_string(version) + " in \"" +
                             path + "\"");
  ModelWeights<float> w;
  w.arch.levels = int(r.u32("levels"));
  w.arch.base_channels = int(r.u32("base_channels"));
  w.arch.image_side = int(r.u32("image_side"));
  const uint32_t n_params = r.u32("parameter count");
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = r.u32("name length");
    r.need(name_len, "parameter name");
    std::string name = bytes.substr(r.pos, name_len);
    r.pos += name_len;
    const uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw std::runtime_error("corrupt checkpoint: bad rank");
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = int(r.u32("dims"));
      if (shape[d] <= 0) throw std::runtime_error("corrupt checkpoint: bad dimension");
      numel *= shape[d];
    }
    r.need(4 * size_t(numel), "payload");
    Tensor<float> t(shape);
    std::memcpy(t.ptr(), bytes.data() + r.pos, 4 * size_t(numel));
    r.pos += 4 * size_t(numel);
    w.params.emplace(std::move(name), std::move(t));
  }
  if (r.pos != bytes.size())
    throw std::runtime_error("corrupt checkpoint: trailing bytes in \"" + path + "\"");

  // The parameter table must be exactly what the descriptor implies.
  auto spec = parameter_spec(w.arch);
  if (spec.size() != w.params.size())
    throw std::runtime_error("corrupt checkpoint: parameter count mismatch");
  for (const auto& [name, shape] : spec) {
    auto it = w.params.find(name);
    if (it == w.params.end() || it->second.shape() != shape)
      throw std::runtime_error("corrupt checkpoint: parameter table mismatch at \"" + name +
                               "\"");
  }
  return w;
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template Tensor<float> forward(Graph<float>&, const ModelWeights<float>&,
                               const Tensor<float>&, const ContextSet<float>&);
template Tensor<double> forward(Graph<double>&, const ModelWeights<double>&,
                                const Tensor<double>&, const ContextSet<double>&);
template Tensor<float> forward_logits(Graph<float>&, const ModelWeights<float>&,
                                      const Tensor<float>&, const ContextSet<float>&);
template Tensor<double> forward_logits(Graph<double>&, const ModelWeights<double>&,
                                       const Tensor<double>&, const ContextSet<double>&);
template std::vector<float> encode_query(const ModelWeights<float>&, const Tensor<float>&);
template std::vector<double> encode_query(const ModelWeights<double>&,
                                          const Tensor<double>&);

}  // namespace ccv

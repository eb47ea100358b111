#include "resflow/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "resflow/error.hpp"

namespace resflow {

namespace {

constexpr std::string_view kMagic = "RFFS1";
constexpr std::uint16_t kVersion = 1;
constexpr std::string_view kLayerPrefix = "layer:";
constexpr std::string_view kPerturbedPrefix = "perturbed:";

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(',', start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t parse_count(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  require(it != m.end(), Errc::invalid_argument, "RFFS1 manifest is missing '" + key + "'");
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    require(pos == it->second.size(), Errc::invalid_argument, "bad value for '" + key + "'");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    fail(Errc::invalid_argument, "bad value for '" + key + "'");
  }
}

void write_tensor(detail::ByteWriter& w, std::string_view name, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u64(m.rows());
  w.u64(m.cols());
  for (double v : m.data()) w.f32(static_cast<float>(v));
}

}  // namespace

bool FeatureSet::has_perturbed() const {
  return !layers.empty() &&
         std::all_of(layers.begin(), layers.end(), [](const auto& l) { return l.perturbed.has_value(); });
}

const FeatureLayer& FeatureSet::layer(std::string_view id) const {
  for (const auto& l : layers)
    if (l.id == id) return l;
  fail(Errc::invalid_argument, "feature set has no layer '" + std::string(id) + "'");
}

void validate(const FeatureSet& fs) {
  require(!fs.layers.empty(), Errc::invalid_argument, "feature set has no layers");
  const std::size_t n = fs.size();
  for (const auto& l : fs.layers) {
    require(!l.id.empty() && l.id.find_first_of(",\n=") == std::string::npos,
            Errc::invalid_argument, "invalid layer id '" + l.id + "'");
    require(l.data.rows() == n, Errc::dim_mismatch,
            "layer '" + l.id + "' has " + std::to_string(l.data.rows()) + " rows, expected " +
                std::to_string(n));
    require(l.data.cols() > 0, Errc::dim_mismatch, "layer '" + l.id + "' has zero width");
    if (l.perturbed)
      require(l.perturbed->rows() == n && l.perturbed->cols() == l.data.cols(), Errc::dim_mismatch,
              "perturbed tensor of layer '" + l.id + "' does not match its base tensor");
    for (const auto& other : fs.layers)
      require(&other == &l || other.id != l.id, Errc::invalid_argument,
              "duplicate layer id '" + l.id + "'");
  }
  if (fs.has_labels()) {
    require(fs.labels.size() == n, Errc::dim_mismatch, "label count does not match sample count");
    for (auto c : fs.labels)
      require(c < fs.class_count, Errc::invalid_argument,
              "label " + std::to_string(c) + " outside [0, " + std::to_string(fs.class_count) + ")");
  }
  if (!fs.splits.empty())
    require(fs.splits.size() == n, Errc::dim_mismatch, "split tag count does not match sample count");
}

std::string encode_featureset(const FeatureSet& fs) {
  validate(fs);
  std::ostringstream manifest;
  manifest << "dataset=" << fs.dataset << "\n";
  manifest << "sample_count=" << fs.size() << "\n";
  manifest << "class_count=" << fs.class_count << "\n";
  manifest << "layers=";
  for (std::size_t i = 0; i < fs.layers.size(); ++i) manifest << (i ? "," : "") << fs.layers[i].id;
  manifest << "\nlayer_dims=";
  for (std::size_t i = 0; i < fs.layers.size(); ++i)
    manifest << (i ? "," : "") << fs.layers[i].data.cols();
  manifest << "\nhas_labels=" << (fs.has_labels() ? 1 : 0) << "\n";
  manifest << "has_perturbed=" << (fs.has_perturbed() ? 1 : 0) << "\n";
  manifest << "has_splits=" << (fs.splits.empty() ? 0 : 1) << "\n";
  for (const auto& [k, v] : fs.extra) manifest << k << "=" << v << "\n";
  const std::string header = manifest.str();

  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);

  std::uint32_t count = 0;
  for (const auto& l : fs.layers) count += l.perturbed ? 2 : 1;
  if (fs.has_labels()) ++count;
  if (!fs.splits.empty()) ++count;
  w.u32(count);

  for (const auto& l : fs.layers) write_tensor(w, std::string(kLayerPrefix) + l.id, l.data);
  for (const auto& l : fs.layers)
    if (l.perturbed) write_tensor(w, std::string(kPerturbedPrefix) + l.id, *l.perturbed);
  if (fs.has_labels()) {
    Matrix lab(fs.size(), 1);
    for (std::size_t i = 0; i < fs.size(); ++i) lab(i, 0) = fs.labels[i];
    write_tensor(w, "labels", lab);
  }
  if (!fs.splits.empty()) {
    Matrix sp(fs.size(), 1);
    for (std::size_t i = 0; i < fs.size(); ++i) sp(i, 0) = static_cast<double>(fs.splits[i]);
    write_tensor(w, "split", sp);
  }
  return std::move(w.str());
}

FeatureSet decode_featureset(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    fail(Errc::bad_magic, "bad magic: not an RFFS1 file");
  detail::ByteReader r(bytes);
  r.bytes(kMagic.size(), "magic");
  const std::uint16_t version = r.u16("header");
  require(version == kVersion, Errc::unsupported_version,
          "unsupported RFFS1 version " + std::to_string(version));
  const std::uint32_t header_len = r.u32("header");
  const std::string header(r.bytes(header_len, "header"));

  std::map<std::string, std::string> manifest;
  std::istringstream lines(header);
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    require(eq != std::string::npos, Errc::invalid_argument, "bad manifest line '" + line + "'");
    manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }

  FeatureSet fs;
  fs.dataset = manifest.count("dataset") ? manifest["dataset"] : "";
  const std::size_t n = parse_count(manifest, "sample_count");
  fs.class_count = parse_count(manifest, "class_count");
  const auto ids = split_list(manifest["layers"]);
  const auto dims = split_list(manifest["layer_dims"]);
  require(!ids.empty() && ids.size() == dims.size(), Errc::dim_mismatch,
          "manifest layer list and layer_dims differ in length");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    FeatureLayer l;
    l.id = ids[i];
    std::map<std::string, std::string> tmp{{"d", dims[i]}};
    l.data = Matrix(0, parse_count(tmp, "d"));
    fs.layers.push_back(std::move(l));
  }
  for (const auto& [k, v] : manifest) {
    static const char* known[] = {"dataset", "sample_count", "class_count", "layers", "layer_dims",
                                  "has_labels", "has_perturbed", "has_splits"};
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) fs.extra[k] = v;
  }

  auto find_layer = [&](std::string_view id) -> FeatureLayer* {
    for (auto& l : fs.layers)
      if (l.id == id) return &l;
    return nullptr;
  };

  std::vector<char> seen(fs.layers.size(), 0);
  const std::uint32_t count = r.u32("tensor table");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32("tensor record");
    const std::string name(r.bytes(name_len, "tensor record"));
    const std::uint64_t rows = r.u64("tensor record");
    const std::uint64_t cols = r.u64("tensor record");
    require(rows == n, Errc::dim_mismatch,
            "tensor '" + name + "' has " + std::to_string(rows) + " rows, manifest says " +
                std::to_string(n));
    if (cols != 0 && rows > r.remaining() / 4 / cols) fail(Errc::truncated, "truncated tensor '" + name + "'");
    r.need(rows * cols * 4, "tensor");
    Matrix m(rows, cols);
    for (double& v : m.data()) v = r.f32("tensor");

    if (name.starts_with(kLayerPrefix) || name.starts_with(kPerturbedPrefix)) {
      const bool pert = name.starts_with(kPerturbedPrefix);
      const std::string id = name.substr(pert ? kPerturbedPrefix.size() : kLayerPrefix.size());
      FeatureLayer* l = find_layer(id);
      require(l != nullptr, Errc::invalid_argument, "tensor '" + name + "' names an unknown layer");
      require(cols == l->data.cols(), Errc::dim_mismatch,
              "tensor '" + name + "' has width " + std::to_string(cols) + ", manifest says " +
                  std::to_string(l->data.cols()));
      if (pert) {
        l->perturbed = std::move(m);
      } else {
        l->data = std::move(m);
        seen[static_cast<std::size_t>(l - fs.layers.data())] = 1;
      }
    } else if (name == "labels") {
      require(cols == 1, Errc::dim_mismatch, "labels tensor must have width 1");
      fs.labels.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = m(i, 0);
        require(v >= 0.0 && v == std::floor(v) && v < 4294967296.0, Errc::invalid_argument,
                "label is not a class id");
        fs.labels[i] = static_cast<std::uint32_t>(v);
      }
    } else if (name == "split") {
      require(cols == 1, Errc::dim_mismatch, "split tensor must have width 1");
      fs.splits.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = m(i, 0);
        require(v == 0.0 || v == 1.0 || v == 2.0, Errc::invalid_argument, "bad split tag");
        fs.splits[i] = static_cast<Split>(static_cast<int>(v));
      }
    } else {
      fail(Errc::invalid_argument, "unknown tensor '" + name + "'");
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    require(seen[i] || n == 0, Errc::truncated, "missing tensor for layer '" + fs.layers[i].id + "'");
  if (n == 0)
    for (auto& l : fs.layers) l.data = Matrix(0, l.data.cols());
  require(r.remaining() == 0, Errc::dim_mismatch, "trailing bytes after the last tensor");
  validate(fs);
  return fs;
}

void write_featureset(const FeatureSet& fs, const std::filesystem::path& path) {
  detail::write_file(path, encode_featureset(fs));
}

FeatureSet read_featureset(const std::filesystem::path& path) {
  return decode_featureset(detail::read_file(path));
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < m.rows(), Errc::invalid_argument, "row index out of range");
    std::copy(m.row(indices[i]).begin(), m.row(indices[i]).end(), out.row(i).begin());
  }
  return out;
}

FeatureSet subset(const FeatureSet& fs, std::span<const std::size_t> indices) {
  FeatureSet out;
  out.dataset = fs.dataset;
  out.class_count = fs.class_count;
  out.extra = fs.extra;
  for (const auto& l : fs.layers) {
    FeatureLayer nl;
    nl.id = l.id;
    nl.data = gather_rows(l.data, indices);
    if (l.perturbed) nl.perturbed = gather_rows(*l.perturbed, indices);
    out.layers.push_back(std::move(nl));
  }
  for (std::size_t i : indices) {
    if (fs.has_labels()) out.labels.push_back(fs.labels[i]);
    if (!fs.splits.empty()) out.splits.push_back(fs.splits[i]);
  }
  return out;
}

std::vector<std::size_t> indices_with_split(const FeatureSet& fs, Split s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fs.size(); ++i)
    if (fs.split_of(i) == s) out.push_back(i);
  return out;
}

FeatureSet split(const FeatureSet& fs, std::array<double, 3> fractions, std::uint64_t seed) {
  validate(fs);
  double total = 0.0;
  for (double f : fractions) {
    require(f >= 0.0, Errc::invalid_argument, "split fractions must be non-negative");
    total += f;
  }
  require(std::abs(total - 1.0) < 1e-9, Errc::invalid_argument, "split fractions must sum to 1");

  const std::size_t n = fs.size();
  const std::size_t groups = fs.has_labels() ? std::max<std::size_t>(fs.class_count, 1) : 1;
  std::vector<std::vector<std::size_t>> members(groups);
  for (std::size_t i = 0; i < n; ++i) members[fs.has_labels() ? fs.labels[i] : 0].push_back(i);

  FeatureSet out = fs;
  out.splits.assign(n, Split::train);
  std::array<std::size_t, 3> counts{};
  for (std::size_t g = 0; g < groups; ++g) {
    auto& idx = members[g];
    Rng rng(mix_seed(seed, g));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const double m = static_cast<double>(idx.size());
    const std::size_t b1 = static_cast<std::size_t>(std::llround(fractions[0] * m));
    const std::size_t b2 = std::min(
        idx.size(), static_cast<std::size_t>(std::llround((fractions[0] + fractions[1]) * m)));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Split s = j < b1 ? Split::train : (j < b2 ? Split::val : Split::test);
      out.splits[idx[j]] = s;
      ++counts[static_cast<std::size_t>(s)];
    }
  }
  static const char* names[] = {"train", "val", "test"};
  for (std::size_t s = 0; s < 3; ++s)
    require(fractions[s] == 0.0 || counts[s] > 0, Errc::invalid_argument,
            std::string("split fractions leave the ") + names[s] + " split empty");
  return out;
}

}  // namespace resflow

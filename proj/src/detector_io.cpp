#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "resflow/error.hpp"
#include "resflow/ood.hpp"

namespace resflow {

namespace {

constexpr std::string_view kMeansMagic{"RFMEAN1\0", 8};
constexpr std::string_view kDetectorFormat = "RFDET1";

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  fail(Errc::invalid_argument, "detector manifest: bad number for '" + key + "'");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
  return out;
}

std::string means_file(std::size_t l) { return "means_" + std::to_string(l) + ".bin"; }
std::string flow_file(std::size_t l, std::size_t c) {
  return "flow_" + std::to_string(l) + "_" + std::to_string(c) + ".rflow";
}

}  // namespace

void save_detector(const Detector& det, const std::filesystem::path& dir) {
  require(!det.layers.empty() && det.alpha.size() == det.layers.size(), Errc::state,
          "save_detector: detector is incomplete");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Errc::io, "cannot create directory " + dir.string() + ": " + ec.message());

  std::ostringstream m;
  m << "format=" << kDetectorFormat << "\n";
  m << "layers=";
  for (std::size_t l = 0; l < det.layers.size(); ++l) m << (l ? "," : "") << det.layers[l].layer_id;
  m << "\nclass_count=" << det.layers.front().class_count() << "\n";
  m << "epsilon=" << num(det.epsilon) << "\n";
  m << "perturb_mode=" << to_string(det.perturb_mode) << "\n";
  m << "alpha=";
  for (std::size_t l = 0; l < det.alpha.size(); ++l) m << (l ? "," : "") << num(det.alpha[l]);
  m << "\nbias=" << num(det.bias) << "\n";
  m << "baseline_only=" << (det.baseline_only ? 1 : 0) << "\n";

  for (std::size_t l = 0; l < det.layers.size(); ++l) {
    const LayerModel& lm = det.layers[l];
    detail::ByteWriter w;
    w.bytes(kMeansMagic);
    w.u64(lm.class_count());
    w.u64(lm.dim());
    for (const auto& mean : lm.class_means)
      for (double v : mean) w.f64(v);
    detail::write_file(dir / means_file(l), w.str());
    m << "means." << l << "=" << means_file(l) << "\n";
    for (std::size_t c = 0; c < lm.flows.size(); ++c) {
      save_flow(lm.flows[c], dir / flow_file(l, c));
      m << "flow." << l << "." << c << "=" << flow_file(l, c) << "\n";
    }
  }
  const std::string text = m.str();
  detail::write_file(dir / "manifest.txt", text);
}

Detector load_detector(const std::filesystem::path& dir) {
  const std::string text = detail::read_file(dir / "manifest.txt");
  std::map<std::string, std::string> kv;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::invalid_argument, "detector manifest: bad line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    require(it != kv.end(), Errc::invalid_argument, "detector manifest: missing '" + key + "'");
    return it->second;
  };
  require(get("format") == kDetectorFormat, Errc::bad_magic, "not a detector manifest");

  Detector det;
  const auto ids = split_commas(get("layers"));
  const std::size_t classes = static_cast<std::size_t>(parse_double(get("class_count"), "class_count"));
  det.epsilon = parse_double(get("epsilon"), "epsilon");
  det.perturb_mode = parse_perturb_mode(get("perturb_mode"));
  det.bias = parse_double(get("bias"), "bias");
  det.baseline_only = get("baseline_only") == "1";
  for (const auto& a : split_commas(get("alpha"))) det.alpha.push_back(parse_double(a, "alpha"));
  require(!ids.empty() && det.alpha.size() == ids.size(), Errc::dim_mismatch,
          "detector manifest: alpha length does not match layer count");

  for (std::size_t l = 0; l < ids.size(); ++l) {
    LayerModel lm;
    lm.layer_id = ids[l];
    const std::string means_bytes = detail::read_file(dir / get("means." + std::to_string(l)));
    if (std::string_view(means_bytes).substr(0, kMeansMagic.size()) != kMeansMagic)
      fail(Errc::bad_magic, "class-mean file has bad magic");
    detail::ByteReader r(means_bytes);
    r.bytes(kMeansMagic.size(), "magic");
    const std::uint64_t c_count = r.u64("class means");
    const std::uint64_t d = r.u64("class means");
    require(c_count == classes, Errc::dim_mismatch, "class-mean file disagrees on class count");
    r.need(c_count * d * 8, "class means");
    for (std::uint64_t c = 0; c < c_count; ++c) {
      Vector mean(d);
      for (double& v : mean) v = r.f64("class means");
      lm.class_means.push_back(std::move(mean));
    }
    std::string first_linear;
    for (std::size_t c = 0; c < classes; ++c) {
      ResidualFlow flow = load_flow(dir / get("flow." + std::to_string(l) + "." + std::to_string(c)));
      require(flow.input_dim() == d, Errc::dim_mismatch, "flow dimension disagrees with class means");
      ResidualFlow linear_part = linear_only_flow(flow.linear);
      const std::string linear_bytes = encode_flow(linear_part);
      if (c == 0) {
        lm.shared_gauss = flow.linear;
        first_linear = linear_bytes;
      } else {
        require(linear_bytes == first_linear, Errc::invalid_argument,
                "flows of layer '" + lm.layer_id + "' do not share one linear block");
        flow.linear = lm.shared_gauss;
      }
      lm.flows.push_back(std::move(flow));
    }
    det.layers.push_back(std::move(lm));
  }
  return det;
}

}  // namespace resflow

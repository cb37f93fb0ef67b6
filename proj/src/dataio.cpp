#include "omnistereo/dataio.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "omnistereo/errors.hpp"

namespace omnistereo {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string to_string(SceneTag t) {
  switch (t) {
    case SceneTag::indoor: return "indoor";
    case SceneTag::outdoor_day: return "outdoor-day";
    case SceneTag::outdoor_night: return "outdoor-night";
    case SceneTag::synthetic: return "synthetic";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

SceneTag parse_scene_tag(const std::string& s) {
  if (s == "indoor") return SceneTag::indoor;
  if (s == "outdoor-day") return SceneTag::outdoor_day;
  if (s == "outdoor-night") return SceneTag::outdoor_night;
  if (s == "synthetic") return SceneTag::synthetic;
  throw DataError("unknown scene tag '" + s + "'");
}

// ------------------------------------------------------------------ manifest

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format"] = "omnistereo-dataset";
  j["version"] = 1;
  j["split"] = to_string(m.split);
  j["rig"] = {{"baseline_m", m.rig.baseline_m},
              {"height_px", m.rig.height_px},
              {"width_px", m.rig.width_px},
              {"vertical_fov_rad", m.rig.vertical_fov_rad}};
  j["disparity_encoding"] = {{"scale", m.encoding.scale}, {"bit_depth", m.encoding.bit_depth}};
  if (m.stats) j["stats"] = {{"d_deg_min", m.stats->d_deg_min}, {"d_deg_max", m.stats->d_deg_max}};
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"top", e.top},
                            {"bottom", e.bottom},
                            {"disparity_sparse", e.disparity_sparse},
                            {"disparity_completed", e.disparity_completed},
                            {"scene_tag", to_string(e.tag)}});
  }
  return j.dump(2);
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path);
  out << manifest_to_json(manifest) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  fs::path file(path);
  if (fs::is_directory(file)) file /= "manifest.json";
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.base_dir = file.parent_path().string();
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "omnistereo-dataset")
      throw DataError(file.string() + ": not an omnistereo dataset manifest");
    if (j.value("version", 0) != 1)
      throw DataError(file.string() + ": unsupported manifest version");
    m.split = parse_split(j.at("split").get<std::string>());
    const auto& rig = j.at("rig");
    m.rig.baseline_m = rig.at("baseline_m").get<double>();
    m.rig.height_px = rig.at("height_px").get<int>();
    m.rig.width_px = rig.at("width_px").get<int>();
    m.rig.vertical_fov_rad = rig.at("vertical_fov_rad").get<double>();
    m.rig.validate();
    const auto& enc = j.at("disparity_encoding");
    m.encoding.scale = enc.at("scale").get<double>();
    m.encoding.bit_depth = enc.at("bit_depth").get<int>();
    if (m.encoding.bit_depth != 16 || !(m.encoding.scale > 0.0))
      throw DataError(file.string() + ": only 16-bit disparity with positive scale is supported");
    if (j.contains("stats"))
      m.stats = DisparityStats{j["stats"].at("d_deg_min").get<double>(), j["stats"].at("d_deg_max").get<double>()};
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("top").get<std::string>(), e.at("bottom").get<std::string>(),
                           e.at("disparity_sparse").get<std::string>(),
                           e.at("disparity_completed").get<std::string>(),
                           parse_scene_tag(e.value("scene_tag", "synthetic"))});
    }
  } catch (const json::exception& ex) {
    throw DataError(file.string() + ": malformed manifest: " + ex.what());
  } catch (const ConfigError& ex) {
    throw DataError(file.string() + ": " + ex.what());
  }
  return m;
}

// --------------------------------------------------------------- codecs

Image read_image(const std::string& path) {
  const cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + path);
  Image img(bgr.rows, bgr.cols, 3);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = row[c][2 - ch] / 255.0f;
  }
  return img;
}

void write_image(const Image& img, const std::string& path) {
  if (img.channels != 3) throw ConfigError("write_image: expected 3 channels");
  cv::Mat bgr(img.rows, img.cols, CV_8UC3);
  for (int r = 0; r < img.rows; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < img.cols; ++c)
      for (int ch = 0; ch < 3; ++ch)
        row[c][2 - ch] = cv::saturate_cast<std::uint8_t>(std::lround(img.at(r, c, ch) * 255.0f));
  }
  if (!cv::imwrite(path, bgr)) throw DataError("cannot write image " + path);
}

Grid<std::uint16_t> encode_disparity(const DisparityMap& d, const DisparityEncoding& enc) {
  Grid<std::uint16_t> raw(d.rows(), d.cols(), 0);
  constexpr double kMax = std::numeric_limits<std::uint16_t>::max();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!d.valid[i]) continue;
    const double v = std::round(d.values[i] * enc.scale);
    // 0 is reserved for invalid; tiny positive values saturate at one step.
    raw[i] = static_cast<std::uint16_t>(std::clamp(v, 1.0, kMax));
  }
  return raw;
}

DisparityMap decode_disparity(const Grid<std::uint16_t>& raw, const DisparityEncoding& enc) {
  DisparityMap d(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == 0) continue;
    d.values[i] = raw[i] / enc.scale;
    d.valid[i] = 1;
  }
  return d;
}

namespace {

Grid<std::uint16_t> read_u16(const std::string& path) {
  const cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot read " + path);
  if (m.type() != CV_16UC1) throw DataError(path + ": expected a 16-bit single-channel PNG");
  Grid<std::uint16_t> g(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    const auto* row = m.ptr<std::uint16_t>(r);
    for (int c = 0; c < m.cols; ++c) g(r, c) = row[c];
  }
  return g;
}

void write_u16(const Grid<std::uint16_t>& g, const std::string& path) {
  cv::Mat m(g.rows(), g.cols(), CV_16UC1);
  for (int r = 0; r < g.rows(); ++r) {
    auto* row = m.ptr<std::uint16_t>(r);
    for (int c = 0; c < g.cols(); ++c) row[c] = g(r, c);
  }
  if (!cv::imwrite(path, m)) throw DataError("cannot write " + path);
}

}  // namespace

DisparityMap read_disparity(const std::string& path, const DisparityEncoding& enc) {
  return decode_disparity(read_u16(path), enc);
}

void write_disparity(const DisparityMap& disparity, const std::string& path,
                     const DisparityEncoding& enc) {
  write_u16(encode_disparity(disparity, enc), path);
}

void write_depth(const DepthMap& depth, const std::string& path, double scale) {
  Grid<std::uint16_t> raw(depth.rows(), depth.cols(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!depth.valid[i]) continue;
    raw[i] = static_cast<std::uint16_t>(std::clamp(std::round(depth.values[i] * scale), 1.0, 65535.0));
  }
  write_u16(raw, path);
}

DepthMap read_depth(const std::string& path, double scale) {
  const auto raw = read_u16(path);
  DepthMap d(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == 0) continue;
    d.values[i] = raw[i] / scale;
    d.valid[i] = 1;
  }
  return d;
}

// ----------------------------------------------------------------- loading

LoadedPair load_pair(const DatasetManifest& m, std::size_t index) {
  if (index >= m.entries.size())
    throw DataError("entry index " + std::to_string(index) + " out of range (" +
                    std::to_string(m.entries.size()) + " entries)");
  const auto& e = m.entries[index];
  const fs::path base(m.base_dir);
  const std::string who = "entry " + std::to_string(index) + " (" + e.top + ")";
  auto resolve = [&](const std::string& rel) {
    const fs::path p = base / rel;
    if (!fs::exists(p)) throw DataError(who + ": missing file " + p.string());
    return p.string();
  };

  LoadedPair out;
  try {
    out.top = read_image(resolve(e.top));
    out.bottom = read_image(resolve(e.bottom));
    out.sparse = read_disparity(resolve(e.disparity_sparse), m.encoding);
    out.completed = read_disparity(resolve(e.disparity_completed), m.encoding);
  } catch (const DataError& ex) {
    const std::string msg = ex.what();
    throw DataError(msg.rfind(who, 0) == 0 ? msg : who + ": " + msg);
  }
  out.tag = e.tag;

  const int h = m.rig.height_px, w = m.rig.width_px;
  auto check = [&](int rows, int cols, const char* what) {
    if (rows != h || cols != w)
      throw DataError(who + ": " + what + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", rig expects " + std::to_string(h) + "x" + std::to_string(w));
  };
  check(out.top.rows, out.top.cols, "top image");
  check(out.bottom.rows, out.bottom.cols, "bottom image");
  check(out.sparse.rows(), out.sparse.cols(), "sparse disparity");
  check(out.completed.rows(), out.completed.cols(), "completed disparity");
  for (std::size_t i = 0; i < out.sparse.valid.size(); ++i)
    if (out.sparse.valid[i] && !out.completed.valid[i])
      throw DataError(who + ": sparse ground truth is not contained in the completed map");
  return out;
}

DisparityStats compute_stats(const DatasetManifest& m) {
  if (m.entries.empty()) throw DataError("compute_stats: empty dataset");
  DisparityStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto d = read_disparity((fs::path(m.base_dir) / m.entries[i].disparity_completed).string(),
                                  m.encoding);
    for (std::size_t k = 0; k < d.values.size(); ++k) {
      if (!d.valid[k]) continue;
      s.d_deg_min = std::min(s.d_deg_min, d.values[k]);
      s.d_deg_max = std::max(s.d_deg_max, d.values[k]);
    }
  }
  if (!(s.d_deg_min <= s.d_deg_max)) throw DataError("compute_stats: no valid ground truth pixels");
  return s;
}

std::string fingerprint(const DatasetManifest& m) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  const std::string doc = manifest_to_json(m);
  EVP_DigestUpdate(ctx.get(), doc.data(), doc.size());
  std::vector<char> buf(1 << 16);
  for (const auto& e : m.entries) {
    for (const auto* rel : {&e.top, &e.bottom, &e.disparity_sparse, &e.disparity_completed}) {
      std::ifstream in(fs::path(m.base_dir) / *rel, std::ios::binary);
      if (!in) throw DataError("fingerprint: missing file " + *rel);
      while (in.read(buf.data(), buf.size()) || in.gcount() > 0)
        EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

}  // namespace omnistereo

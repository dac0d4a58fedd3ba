#include "afp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <nlohmann/json.hpp>
#include <sstream>

#include "afp/error.hpp"
#include "afp/rng.hpp"

namespace afp {

void SynthConfig::validate() const {
  check(image_size > 0, ErrorKind::kInvalidArgument,
        "synth config: image_size must be positive");
  check(min_blobs >= 0 && max_blobs >= min_blobs, ErrorKind::kInvalidArgument,
        "synth config: need 0 <= min_blobs <= max_blobs");
  check(min_radius > 2.0 && max_radius >= min_radius &&
            max_radius < image_size / 3.0,
        ErrorKind::kInvalidArgument,
        "synth config: radius range must lie within (2, image_size / 3)");
  check(texture_amplitude >= 0, ErrorKind::kInvalidArgument,
        "synth config: texture_amplitude must be non-negative");
}

namespace data {
namespace {

using json = nlohmann::json;

constexpr int kMaxPlacementAttempts = 100;
constexpr double kBlobGap = 2.0;

double snap(double v) { return std::round(v * 64.0) / 64.0; }

bool boxes_overlap(const Box& a, const Box& b, double gap) {
  return a.x1 < b.x2 + gap && b.x1 < a.x2 + gap && a.y1 < b.y2 + gap &&
         b.y1 < a.y2 + gap;
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box parse_box(const json& j, const std::string& where) {
  check(j.is_array() && j.size() == 4, ErrorKind::kParse,
        where + ": box must be an array of 4 numbers");
  for (const auto& v : j)
    check(v.is_number(), ErrorKind::kParse, where + ": box entries must be numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

template <typename Record, typename Fn>
std::vector<Record> parse_jsonl(const std::filesystem::path& path, Fn&& parse) {
  std::vector<Record> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::exception& e) {
      fail(ErrorKind::kParse, where + ": " + e.what());
    }
    check(j.is_object(), ErrorKind::kParse, where + ": expected a JSON object");
    check(j.contains("image") && j["image"].is_string(), ErrorKind::kParse,
          where + ": missing string field \"image\"");
    out.push_back(parse(j, where));
  }
  return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  check(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
  check(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::string& where) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  check(!tok.empty(), ErrorKind::kFormat, where + ": truncated PPM header");
  return tok;
}

int header_int(std::istream& in, const std::string& where) {
  const std::string tok = header_token(in, where);
  check(!tok.empty() && std::all_of(tok.begin(), tok.end(), ::isdigit),
        ErrorKind::kFormat, where + ": bad PPM header value '" + tok + "'");
  return std::stoi(tok);
}

Sample flip(const Sample& s, bool horizontal) {
  Sample out = s;
  const int h = s.image.h();
  const int w = s.image.w();
  for (int c = 0; c < s.image.c(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sx = horizontal ? w - 1 - x : x;
        const int sy = horizontal ? y : h - 1 - y;
        out.image.at(0, c, y, x) = s.image.at(0, c, sy, sx);
      }
  for (auto& gt : out.gts) {
    const Box b = gt.box;
    if (horizontal)
      gt.box = {w - b.x2, b.y1, w - b.x1, b.y2};
    else
      gt.box = {b.x1, h - b.y2, b.x2, h - b.y1};
  }
  return out;
}

}  // namespace

Sample synth_sample(const SynthConfig& config, std::uint64_t index) {
  config.validate();
  Rng rng(mix_seed(config.seed, index));
  const int size = config.image_size;
  Sample sample;
  sample.id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(index);
  sample.image = Tensor(Shape{1, 3, size, size});

  // Mucosa-like background: tinted base plus low-frequency waves and grain.
  const double base[3] = {rng.uniform(0.35, 0.5), rng.uniform(0.2, 0.32),
                          rng.uniform(0.18, 0.28)};
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3];
  for (auto& wv : waves) {
    const double angle = rng.uniform(0, 2 * std::numbers::pi);
    const double freq = rng.uniform(0.02, 0.08);
    wv = {freq * std::cos(angle), freq * std::sin(angle),
          rng.uniform(0, 2 * std::numbers::pi), config.texture_amplitude / 3.0};
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double tex = 0;
      for (const auto& wv : waves)
        tex += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
      const double grain = 0.02 * (rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c)
        sample.image.at(0, c, y, x) = std::clamp(base[c] + tex + grain, 0.0, 1.0);
    }

  const int count = rng.uniform_int(config.min_blobs, config.max_blobs);
  for (int b = 0; b < count; ++b) {
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
      const double r = rng.uniform(config.min_radius, config.max_radius);
      const double aspect = rng.uniform(0.7, 1.4);
      // 1/64 px grid: flipped coordinates and widths stay exact
      const double ax = snap(r);
      const double ay = snap(std::min(r * aspect, size / 2.0 - 2.0));
      const double cx = snap(rng.uniform(ax + 1.0, size - ax - 1.0));
      const double cy = snap(rng.uniform(ay + 1.0, size - ay - 1.0));
      const Box box{cx - ax, cy - ay, cx + ax, cy + ay};
      const bool clash = std::any_of(
          sample.gts.begin(), sample.gts.end(),
          [&](const GroundTruth& g) { return boxes_overlap(g.box, box, kBlobGap); });
      if (clash) continue;
      const double contrast = rng.uniform(0.2, 0.4);
      const double tint[3] = {1.0, rng.uniform(0.55, 0.8), rng.uniform(0.45, 0.7)};
      const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
      const int x1 = std::min(size - 1, static_cast<int>(std::ceil(box.x2)));
      const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
      const int y1 = std::min(size - 1, static_cast<int>(std::ceil(box.y2)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double u = (x + 0.5 - cx) / ax;
          const double v = (y + 0.5 - cy) / ay;
          const double rho2 = u * u + v * v;
          if (rho2 >= 1.0) continue;
          const double dome = std::sqrt(1.0 - rho2);
          for (int c = 0; c < 3; ++c) {
            double& px = sample.image.at(0, c, y, x);
            px = std::clamp(px + contrast * tint[c] * dome, 0.0, 1.0);
          }
        }
      sample.gts.push_back({box, 0});
      break;
    }
  }
  return sample;
}

std::vector<Sample> synth_dataset(const SynthConfig& config,
                                  std::uint64_t first_index, int count) {
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synth_sample(config, first_index + i));
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  return parse_jsonl<AnnotationRecord>(path, [](const json& j, const std::string& where) {
    AnnotationRecord rec;
    rec.image = j["image"].get<std::string>();
    check(j.contains("boxes") && j["boxes"].is_array(), ErrorKind::kParse,
          where + ": missing array field \"boxes\"");
    for (const auto& b : j["boxes"]) {
      const Box box = parse_box(b, where);
      check(box.valid(), ErrorKind::kParse,
            where + ": box must satisfy x2 > x1 and y2 > y1");
      rec.gts.push_back({box, 0});
    }
    return rec;
  });
}

void write_annotations(const std::filesystem::path& path,
                       std::span<const AnnotationRecord> records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    json boxes = json::array();
    for (const auto& g : r.gts) boxes.push_back(box_json(g.box));
    rows.push_back({{"image", r.image}, {"boxes", boxes}});
  }
  write_lines(path, rows);
}

Tensor load_image_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  const std::string where = path.string();
  const std::string magic = header_token(in, where);
  check(magic == "P6", ErrorKind::kFormat,
        where + ": expected P6 magic, found '" + magic + "'");
  const int width = header_int(in, where);
  const int height = header_int(in, where);
  const int maxval = header_int(in, where);
  check(width > 0 && height > 0, ErrorKind::kFormat, where + ": empty image");
  check(maxval > 0 && maxval <= 65535, ErrorKind::kFormat,
        where + ": maxval must lie in [1, 65535]");
  const int bytes_per = maxval < 256 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(width) * height * 3;
  std::vector<unsigned char> raw(count * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(static_cast<std::size_t>(in.gcount()) == raw.size(), ErrorKind::kFormat,
        where + ": truncated pixel data");
  Tensor img(Shape{1, 3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3 + c;
        const unsigned v = bytes_per == 1
                               ? raw[i]
                               : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
        img.at(0, c, y, x) = static_cast<double>(v) / maxval;
      }
  return img;
}

void write_image_ppm(const std::filesystem::path& path, const Tensor& image) {
  check(image.n() == 1 && image.c() == 3, ErrorKind::kShapeMismatch,
        "write_image_ppm expects a (1, 3, H, W) tensor, got " + to_string(image.shape()));
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << "P6\n" << image.w() << ' ' << image.h() << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(image.w()) * image.h() * 3);
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
        raw[(static_cast<std::size_t>(y) * image.w() + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

void validate_boxes(const std::vector<GroundTruth>& gts, int width, int height,
                    const std::string& id) {
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const Box& b = gts[i].box;
    check(b.valid(), ErrorKind::kInvalidArgument,
          id + ": box " + std::to_string(i) + " is empty");
    check(b.x1 >= 0 && b.y1 >= 0 && b.x2 <= width && b.y2 <= height,
          ErrorKind::kInvalidArgument,
          id + ": box " + std::to_string(i) + " lies outside the " +
              std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& annotations) {
  const auto records = load_annotations(annotations);
  const auto root = annotations.parent_path();
  std::vector<Sample> out;
  for (const auto& rec : records) {
    std::filesystem::path img = rec.image;
    if (img.is_relative()) img = root / img;
    Sample s;
    s.image = load_image_ppm(img);
    s.gts = rec.gts;
    s.id = rec.image;
    validate_boxes(s.gts, s.image.w(), s.image.h(), rec.image);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<DetectionRecord> load_detections(const std::filesystem::path& path) {
  return parse_jsonl<DetectionRecord>(path, [](const json& j, const std::string& where) {
    DetectionRecord rec;
    rec.image = j["image"].get<std::string>();
    check(j.contains("detections") && j["detections"].is_array(), ErrorKind::kParse,
          where + ": missing array field \"detections\"");
    for (const auto& d : j["detections"]) {
      check(d.is_object() && d.contains("box") && d.contains("score") &&
                d["score"].is_number(),
            ErrorKind::kParse, where + ": detection needs \"box\" and \"score\"");
      Detection det;
      det.box = parse_box(d["box"], where);
      det.score = d["score"].get<double>();
      if (d.contains("class")) det.label = d["class"].get<int>();
      rec.detections.push_back(det);
    }
    return rec;
  });
}

std::string detections_jsonl(std::span<const DetectionRecord> records) {
  std::string text;
  for (const auto& r : records) {
    json dets = json::array();
    for (const auto& d : r.detections)
      dets.push_back({{"box", box_json(d.box)}, {"score", d.score}});
    text += json{{"image", r.image}, {"detections", dets}}.dump();
    text += '\n';
  }
  return text;
}

void write_detections(const std::filesystem::path& path,
                      std::span<const DetectionRecord> records) {
  std::ofstream out(path);
  check(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << detections_jsonl(records);
  check(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

Sample flip_horizontal(const Sample& sample) { return flip(sample, true); }
Sample flip_vertical(const Sample& sample) { return flip(sample, false); }

std::vector<int> shuffled_order(int n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed ^ 0x5EEDF00DULL, epoch));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

}  // namespace data
}  // namespace afp

#include "dssd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dssd/errors.hpp"

namespace dssd {
namespace {

using Rgb = std::array<double, 3>;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) {
  return uniform(rng, 0.0, 1.0) < p;
}

float quantize(double v) {
  return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
}

Rgb class_color(ShapeClass c) {
  switch (c) {
    case ShapeClass::kCircle:
      return {0.85, 0.15, 0.15};
    case ShapeClass::kSquare:
      return {0.15, 0.75, 0.20};
    case ShapeClass::kTriangle:
      return {0.20, 0.30, 0.90};
  }
  return {0.0, 0.0, 0.0};
}

struct PixelRect {
  int x, y, w, h;
  bool overlaps(const PixelRect& o, int gap) const {
    return x < o.x + o.w + gap && o.x < x + w + gap && y < o.y + o.h + gap && o.y < y + h + gap;
  }
};

bool inside_shape(ShapeClass c, const PixelRect& r, double xc, double yc) {
  switch (c) {
    case ShapeClass::kSquare:
      return true;
    case ShapeClass::kCircle: {
      const double dx = (xc - (r.x + r.w / 2.0)) / (r.w / 2.0);
      const double dy = (yc - (r.y + r.h / 2.0)) / (r.h / 2.0);
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeClass::kTriangle: {
      const double t = (yc - r.y) / r.h;
      return std::abs(xc - (r.x + r.w / 2.0)) <= t * r.w / 2.0;
    }
  }
  return false;
}

void check_image(const Tensor& image, const char* what) {
  if (image.n() != 1 || image.c() != 3 || image.h() < 1 || image.w() < 1) {
    throw ShapeError(std::string(what) + ": expected a (1,3,H,W) image, got " + image.shape().str());
  }
}

Rgb mean_color(const Tensor& image) {
  Rgb m{};
  const std::size_t plane = static_cast<std::size_t>(image.h()) * image.w();
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += image[c * plane + i];
    m[c] = sum / static_cast<double>(plane);
  }
  return m;
}

// h, s, v in [0, 1].
Rgb rgb_to_hsv(const Rgb& p) {
  const double mx = std::max({p[0], p[1], p[2]});
  const double mn = std::min({p[0], p[1], p[2]});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == p[0]) {
      h = std::fmod((p[1] - p[2]) / d, 6.0);
    } else if (mx == p[1]) {
      h = (p[2] - p[0]) / d + 2.0;
    } else {
      h = (p[0] - p[1]) / d + 4.0;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
  }
  return {h, mx > 0.0 ? d / mx : 0.0, mx};
}

Rgb hsv_to_rgb(const Rgb& hsv) {
  const double h6 = hsv[0] * 6.0;
  const double c = hsv[2] * hsv[1];
  const double x = c * (1.0 - std::abs(std::fmod(h6, 2.0) - 1.0));
  const double m = hsv[2] - c;
  Rgb r;
  switch (static_cast<int>(h6) % 6) {
    case 0: r = {c, x, 0}; break;
    case 1: r = {x, c, 0}; break;
    case 2: r = {0, c, x}; break;
    case 3: r = {0, x, c}; break;
    case 4: r = {x, 0, c}; break;
    default: r = {c, 0, x}; break;
  }
  return {r[0] + m, r[1] + m, r[2] + m};
}

template <typename Fn>
void map_pixels(Tensor& image, Fn fn) {
  const std::size_t plane = static_cast<std::size_t>(image.h()) * image.w();
  for (std::size_t i = 0; i < plane; ++i) {
    Rgb p{image[i], image[plane + i], image[2 * plane + i]};
    p = fn(p);
    for (int c = 0; c < 3; ++c) {
      image[c * plane + i] = static_cast<float>(std::clamp(p[c], 0.0, 1.0));
    }
  }
}

}  // namespace

std::string_view to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::kCircle:
      return "circle";
    case ShapeClass::kSquare:
      return "square";
    case ShapeClass::kTriangle:
      return "triangle";
  }
  return "?";
}

Sample gen_scene(std::uint64_t seed, const SceneSpec& spec) {
  const int size = spec.image_size;
  if (size < 4) throw SpecError("gen_scene: image size must be at least 4");
  if (spec.num_objects < 0) throw SpecError("gen_scene: negative object count");
  if (spec.num_classes < 1 || spec.num_classes > 3) {
    throw SpecError("gen_scene: class count must be 1..3");
  }
  if (!(spec.min_size > 0.0 && spec.min_size <= spec.max_size && spec.max_size <= 1.0)) {
    throw SpecError("gen_scene: size range must satisfy 0 < min <= max <= 1");
  }
  Rng rng(seed);
  Sample s;
  s.seed = seed;
  s.image = Tensor(Shape{1, 3, size, size});
  const std::size_t plane = static_cast<std::size_t>(size) * size;

  Rgb base;
  for (double& v : base) v = uniform(rng, 0.35, 0.65);
  const double fx = uniform(rng, 0.2, 0.8);
  const double fy = uniform(rng, 0.2, 0.8);
  const double phase = uniform(rng, 0.0, 6.283185307179586);
  std::vector<double> canvas(3 * plane);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double wave = 0.06 * std::sin(fx * x + fy * y + phase);
      for (int c = 0; c < 3; ++c) {
        canvas[c * plane + y * size + x] = base[c] + wave + uniform(rng, -0.04, 0.04);
      }
    }
  }

  std::vector<PixelRect> placed;
  for (int i = 0; i < spec.num_objects; ++i) {
    const auto cls = static_cast<ShapeClass>(uniform_int(rng, 1, spec.num_classes));
    bool ok = false;
    PixelRect r{};
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const double side = uniform(rng, spec.min_size, spec.max_size) * size;
      const double log_ratio = uniform(rng, -spec.aspect_jitter, spec.aspect_jitter);
      const double sr = std::exp(log_ratio / 2.0);
      r.w = std::clamp(static_cast<int>(std::lround(side * sr)), 2, size);
      r.h = std::clamp(static_cast<int>(std::lround(side / sr)), 2, size);
      r.x = uniform_int(rng, 0, size - r.w);
      r.y = uniform_int(rng, 0, size - r.h);
      ok = std::none_of(placed.begin(), placed.end(),
                        [&](const PixelRect& p) { return p.overlaps(r, 1); });
    }
    if (!ok) {
      throw SpecError("gen_scene: could not place object " + std::to_string(i) +
                      " after 100 attempts");
    }
    placed.push_back(r);
    Rgb color = class_color(cls);
    for (double& v : color) v = std::clamp(v + uniform(rng, -0.05, 0.05), 0.0, 1.0);
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        if (!inside_shape(cls, r, x + 0.5, y + 0.5)) continue;
        for (int c = 0; c < 3; ++c) canvas[c * plane + y * size + x] = color[c];
      }
    }
    s.gts.push_back({Box::from_corners(static_cast<double>(r.x) / size,
                                       static_cast<double>(r.y) / size,
                                       static_cast<double>(r.x + r.w) / size,
                                       static_cast<double>(r.y + r.h) / size),
                     static_cast<int>(cls)});
  }
  for (std::size_t i = 0; i < canvas.size(); ++i) s.image[i] = quantize(canvas[i]);
  return s;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = dataset_seed * 0x9E3779B97F4A7C15ull + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<Sample> gen_dataset(std::uint64_t seed, std::size_t count, const SceneSpec& spec) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_scene(sample_seed(seed, i), spec));
  return out;
}

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw SpecError(std::string("augment: ") + what + " not in [0,1]");
  };
  prob(expand_prob, "expand_prob");
  prob(flip_prob, "flip_prob");
  prob(photometric_prob, "photometric_prob");
  if (!(max_expand_ratio >= 1.0)) throw SpecError("augment: max_expand_ratio must be >= 1");
  if (crop_modes.empty()) throw SpecError("augment: no crop modes");
  if (!(crop_min_scale > 0.0 && crop_min_scale <= 1.0)) {
    throw SpecError("augment: crop_min_scale must be in (0,1]");
  }
  if (!(contrast_lo <= contrast_hi && saturation_lo <= saturation_hi)) {
    throw SpecError("augment: jitter ranges must be ordered");
  }
}

Sample expand_with(const Sample& s, double ratio, int left, int top) {
  check_image(s.image, "expand");
  if (!(ratio >= 1.0)) throw SpecError("expand: ratio must be >= 1");
  const int h = s.image.h();
  const int w = s.image.w();
  const int ch = static_cast<int>(std::lround(h * ratio));
  const int cw = static_cast<int>(std::lround(w * ratio));
  if (left < 0 || top < 0 || left > cw - w || top > ch - h) {
    throw SpecError("expand: offset places the image outside the canvas");
  }
  const Rgb mean = mean_color(s.image);
  Sample out;
  out.seed = s.seed;
  out.image = Tensor(Shape{1, 3, ch, cw});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) out.image.at(0, c, y, x) = static_cast<float>(mean[c]);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.image.at(0, c, y + top, x + left) = s.image.at(0, c, y, x);
    }
  }
  for (const GroundTruth& g : s.gts) {
    out.gts.push_back({Box::from_corners((g.box.x0() * w + left) / cw, (g.box.y0() * h + top) / ch,
                                         (g.box.x1() * w + left) / cw, (g.box.y1() * h + top) / ch),
                       g.label});
  }
  return out;
}

Sample expand(const Sample& s, Rng& rng, const AugmentConfig& cfg) {
  if (!coin(rng, cfg.expand_prob)) return s;
  const double ratio = uniform(rng, 1.0, cfg.max_expand_ratio);
  const int ch = static_cast<int>(std::lround(s.image.h() * ratio));
  const int cw = static_cast<int>(std::lround(s.image.w() * ratio));
  const int left = uniform_int(rng, 0, cw - s.image.w());
  const int top = uniform_int(rng, 0, ch - s.image.h());
  return expand_with(s, ratio, left, top);
}

Sample crop_to(const Sample& s, int x0, int y0, int x1, int y1) {
  check_image(s.image, "crop");
  const int h = s.image.h();
  const int w = s.image.w();
  if (x0 < 0 || y0 < 0 || x1 > w || y1 > h || x0 >= x1 || y0 >= y1) {
    throw SpecError("crop: patch outside image or empty");
  }
  const int pw = x1 - x0;
  const int ph = y1 - y0;
  Sample out;
  out.seed = s.seed;
  out.image = Tensor(Shape{1, 3, ph, pw});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y + y0, x + x0);
    }
  }
  const double nx0 = static_cast<double>(x0) / w;
  const double ny0 = static_cast<double>(y0) / h;
  const double nx1 = static_cast<double>(x1) / w;
  const double ny1 = static_cast<double>(y1) / h;
  for (const GroundTruth& g : s.gts) {
    if (!(g.box.cx > nx0 && g.box.cx < nx1 && g.box.cy > ny0 && g.box.cy < ny1)) continue;
    const double bx0 = std::max(g.box.x0(), nx0);
    const double by0 = std::max(g.box.y0(), ny0);
    const double bx1 = std::min(g.box.x1(), nx1);
    const double by1 = std::min(g.box.y1(), ny1);
    out.gts.push_back({Box::from_corners((bx0 - nx0) / (nx1 - nx0), (by0 - ny0) / (ny1 - ny0),
                                         (bx1 - nx0) / (nx1 - nx0), (by1 - ny0) / (ny1 - ny0)),
                       g.label});
  }
  return out;
}

Sample random_crop(const Sample& s, Rng& rng, const AugmentConfig& cfg) {
  check_image(s.image, "crop");
  const double mode = cfg.crop_modes[uniform_int(rng, 0, static_cast<int>(cfg.crop_modes.size()) - 1)];
  if (mode < 0.0) return s;
  const int h = s.image.h();
  const int w = s.image.w();
  for (int attempt = 0; attempt < cfg.crop_attempts; ++attempt) {
    const int pw = std::max(1, static_cast<int>(std::lround(uniform(rng, cfg.crop_min_scale, 1.0) * w)));
    const int ph = std::max(1, static_cast<int>(std::lround(uniform(rng, cfg.crop_min_scale, 1.0) * h)));
    const double aspect = static_cast<double>(ph) / pw;
    if (aspect < 0.5 || aspect > 2.0) continue;
    const int x0 = uniform_int(rng, 0, w - pw);
    const int y0 = uniform_int(rng, 0, h - ph);
    const Box patch = Box::from_corners(static_cast<double>(x0) / w, static_cast<double>(y0) / h,
                                        static_cast<double>(x0 + pw) / w,
                                        static_cast<double>(y0 + ph) / h);
    if (mode > 0.0) {
      const bool meets = std::any_of(s.gts.begin(), s.gts.end(), [&](const GroundTruth& g) {
        return jaccard(patch, g.box) >= mode;
      });
      if (!meets) continue;
    }
    Sample out = crop_to(s, x0, y0, x0 + pw, y0 + ph);
    if (!s.gts.empty() && out.gts.empty()) continue;
    return out;
  }
  return s;
}

Sample flip_horizontal(const Sample& s) {
  check_image(s.image, "flip");
  Sample out = s;
  const int w = s.image.w();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s.image.h(); ++y) {
      for (int x = 0; x < w; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y, w - 1 - x);
    }
  }
  for (GroundTruth& g : out.gts) g.box.cx = 1.0 - g.box.cx;
  return out;
}

Sample flip(const Sample& s, Rng& rng, double prob) {
  return coin(rng, prob) ? flip_horizontal(s) : s;
}

Sample photometric(const Sample& s, Rng& rng, const AugmentConfig& cfg) {
  check_image(s.image, "photometric");
  Sample out = s;
  const double p = cfg.photometric_prob;
  if (coin(rng, p)) {
    const double delta = uniform(rng, -cfg.brightness, cfg.brightness);
    map_pixels(out.image, [&](Rgb v) {
      for (double& x : v) x += delta;
      return v;
    });
  }
  auto contrast = [&] {
    if (!coin(rng, p)) return;
    const double alpha = uniform(rng, cfg.contrast_lo, cfg.contrast_hi);
    map_pixels(out.image, [&](Rgb v) {
      for (double& x : v) x *= alpha;
      return v;
    });
  };
  const bool contrast_first = coin(rng, 0.5);
  if (contrast_first) contrast();
  if (coin(rng, p)) {
    const double sat = uniform(rng, cfg.saturation_lo, cfg.saturation_hi);
    map_pixels(out.image, [&](Rgb v) {
      Rgb hsv = rgb_to_hsv(v);
      hsv[1] = std::clamp(hsv[1] * sat, 0.0, 1.0);
      return hsv_to_rgb(hsv);
    });
  }
  if (coin(rng, p)) {
    const double shift = uniform(rng, -cfg.hue, cfg.hue);
    map_pixels(out.image, [&](Rgb v) {
      Rgb hsv = rgb_to_hsv(v);
      hsv[0] = hsv[0] + shift - std::floor(hsv[0] + shift);
      return hsv_to_rgb(hsv);
    });
  }
  if (!contrast_first) contrast();
  return out;
}

Sample resize_square(const Sample& s, int size) {
  check_image(s.image, "resize");
  if (size <= 0) throw SpecError("resize: size must be positive");
  const int h = s.image.h();
  const int w = s.image.w();
  Sample out;
  out.seed = s.seed;
  out.gts = s.gts;
  out.image = Tensor(Shape{1, 3, size, size});
  if (h == size && w == size) {
    out.image = s.image;
    return out;
  }
  auto source = [](int d, int in, int out_size, int& i0, int& i1, double& t) {
    double src = (d + 0.5) * in / out_size - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    t = src - i0;
  };
  for (int y = 0; y < size; ++y) {
    int y0, y1;
    double ty;
    source(y, h, size, y0, y1, ty);
    for (int x = 0; x < size; ++x) {
      int x0, x1;
      double tx;
      source(x, w, size, x0, x1, tx);
      for (int c = 0; c < 3; ++c) {
        const double top = s.image.at(0, c, y0, x0) * (1 - tx) + s.image.at(0, c, y0, x1) * tx;
        const double bot = s.image.at(0, c, y1, x0) * (1 - tx) + s.image.at(0, c, y1, x1) * tx;
        out.image.at(0, c, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

Sample augment(const Sample& s, std::uint64_t seed, const AugmentConfig& cfg, int out_size) {
  Rng rng(seed);
  Sample x = expand(s, rng, cfg);
  x = random_crop(x, rng, cfg);
  x = resize_square(x, out_size);
  x = flip(x, rng, cfg.flip_prob);
  return photometric(x, rng, cfg);
}

Tensor stack_images(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ShapeError("stack_images: empty batch");
  const Shape one = samples.front()->image.shape();
  Tensor batch(Shape{static_cast<int>(samples.size()), one.c, one.h, one.w});
  const std::size_t per = one.numel();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->image.shape() != one) {
      throw ShapeError("stack_images: image " + std::to_string(i) + " has shape " +
                       samples[i]->image.shape().str() + ", expected " + one.str());
    }
    std::copy_n(samples[i]->image.ptr(), per, batch.ptr() + i * per);
  }
  return batch;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  check_image(image, "write_ppm");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("write_ppm: cannot open " + path.string());
  f << "P6\n" << image.w() << " " << image.h() << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(image.w()) * 3);
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x * 3 + c] = static_cast<unsigned char>(
            std::lround(std::clamp(image.at(0, c, y, x), 0.0f, 1.0f) * 255.0f));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw FormatError("write_ppm: write failed for " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("read_ppm: cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (f.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  if (token() != "P6") throw FormatError("read_ppm: " + path.string() + " is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError("read_ppm: malformed header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw FormatError("read_ppm: unsupported geometry or depth in " + path.string());
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("read_ppm: truncated pixel data in " + path.string());
  }
  Tensor image(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(0, c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
      }
    }
  }
  return image;
}

namespace {

std::string image_name(std::size_t i) {
  std::ostringstream s;
  s.width(4);
  s.fill('0');
  s << i << ".ppm";
  return s.str();
}

std::filesystem::path annotations_path(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) ? p / "annotations.jsonl" : p;
}

struct AnnotationLine {
  std::string image;
  std::vector<GroundTruth> gts;
};

std::vector<AnnotationLine> read_annotation_lines(const std::filesystem::path& jsonl) {
  std::ifstream f(jsonl);
  if (!f) throw FormatError("annotations: cannot open " + jsonl.string());
  std::vector<AnnotationLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotationLine a;
      a.image = j.at("image").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        if (b.size() != 5) throw FormatError("box needs 5 entries");
        a.gts.push_back({Box::from_corners(b[0].get<double>(), b[1].get<double>(),
                                           b[2].get<double>(), b[3].get<double>()),
                         b[4].get<int>()});
      }
      out.push_back(std::move(a));
    } catch (const std::exception& e) {
      throw FormatError("annotations: " + jsonl.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw FormatError("save_dataset: cannot write " + (dir / "annotations.jsonl").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = image_name(i);
    write_ppm(dir / "images" / name, samples[i].image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const GroundTruth& g : samples[i].gts) {
      boxes.push_back({g.box.x0(), g.box.y0(), g.box.x1(), g.box.y1(), g.label});
    }
    ann << nlohmann::json{{"image", name}, {"boxes", boxes}}.dump() << "\n";
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir_or_jsonl) {
  const auto jsonl = annotations_path(dir_or_jsonl);
  const auto root = jsonl.parent_path();
  std::vector<Sample> out;
  std::size_t index = 0;
  for (AnnotationLine& a : read_annotation_lines(jsonl)) {
    Sample s;
    s.image = read_ppm(root / "images" / a.image);
    s.gts = std::move(a.gts);
    s.seed = index++;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<GroundTruth>> load_annotations(const std::filesystem::path& jsonl) {
  std::vector<std::vector<GroundTruth>> out;
  for (AnnotationLine& a : read_annotation_lines(annotations_path(jsonl))) {
    out.push_back(std::move(a.gts));
  }
  return out;
}

}  // namespace dssd

#include "nasaudit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "nasaudit/error.hpp"

namespace nasaudit {

namespace {

double clip_pixel(double v) { return std::min(255.0, std::max(0.0, v)); }

// Balanced class assignment: class c owns floor(n/C) rows plus one of the
// first n%C remainders.
std::vector<int> balanced_labels(std::size_t n, std::size_t C) {
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t count = n / C + (c < n % C ? 1 : 0);
    labels.insert(labels.end(), count, static_cast<int>(c));
  }
  return labels;
}

// Per-feature affine rescale into [0,255].
void rescale_to_pixels(Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  for (std::size_t j = 0; j < d; ++j) {
    double lo = features.at(0, j), hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, features.at(i, j));
      hi = std::max(hi, features.at(i, j));
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i)
      features.at(i, j) = span > 0.0 ? (features.at(i, j) - lo) / span * 255.0 : 127.5;
  }
}

}  // namespace

std::size_t Dataset::poison_count() const {
  std::size_t c = 0;
  for (const std::uint8_t m : poison_mask) c += m != 0;
  return c;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices, std::string new_name) const {
  Dataset out;
  out.features = features.gather_rows(indices);
  out.labels.reserve(indices.size());
  out.poison_mask.reserve(indices.size());
  for (const std::size_t i : indices) {
    out.labels.push_back(labels[i]);
    out.poison_mask.push_back(poison_mask[i]);
  }
  out.class_count = class_count;
  out.name = std::move(new_name);
  return out;
}

void Dataset::validate() const {
  if (features.rank() != 2) throw ContractError("dataset " + name + ": features must be 2-D");
  if (features.rows() != labels.size())
    throw ContractError("dataset " + name + ": feature rows vs labels mismatch");
  if (poison_mask.size() != labels.size())
    throw ContractError("dataset " + name + ": poison mask length mismatch");
  for (const int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw ContractError("dataset " + name + ": label " + std::to_string(y) + " out of range");
}

SyntheticKind synthetic_kind_from(const std::string& s) {
  if (s == "blobs") return SyntheticKind::blobs;
  if (s == "moons") return SyntheticKind::moons;
  if (s == "rings") return SyntheticKind::rings;
  throw ConfigError("unknown synthetic dataset kind: " + s);
}

const char* synthetic_kind_name(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::blobs: return "blobs";
    case SyntheticKind::moons: return "moons";
    case SyntheticKind::rings: return "rings";
  }
  return "?";
}

namespace {

// Multi-modal blobs: each class owns `modes` Gaussian clusters placed at
// roots-of-unity angles on a circle of radius `sep` inside a per-class random
// 2-D plane of the full feature space. The angles sum to zero, so every class
// mean is the origin and the task has no affine solution; any genotype with a
// real nonlinearity on the data path separates the clusters easily.
void fill_multimodal_blobs(Dataset& out, std::size_t d, std::size_t C, std::size_t modes,
                           double noise, Rng& rng) {
  const double sep = 2.0;
  // Per-class random orthonormal plane (u, v) via Gram-Schmidt on Gaussian draws.
  std::vector<double> axes(C * 2 * d);
  for (std::size_t c = 0; c < C; ++c) {
    double* u = &axes[(c * 2 + 0) * d];
    double* v = &axes[(c * 2 + 1) * d];
    for (std::size_t j = 0; j < d; ++j) u[j] = rng.normal();
    for (std::size_t j = 0; j < d; ++j) v[j] = rng.normal();
    double nu = 0.0;
    for (std::size_t j = 0; j < d; ++j) nu += u[j] * u[j];
    nu = std::sqrt(nu);
    for (std::size_t j = 0; j < d; ++j) u[j] /= nu;
    double uv = 0.0;
    for (std::size_t j = 0; j < d; ++j) uv += u[j] * v[j];
    for (std::size_t j = 0; j < d; ++j) v[j] -= uv * u[j];
    double nv = 0.0;
    for (std::size_t j = 0; j < d; ++j) nv += v[j] * v[j];
    nv = std::sqrt(nv);
    for (std::size_t j = 0; j < d; ++j) v[j] /= nv;
  }
  const std::size_t n = out.labels.size();
  std::vector<std::size_t> seen(C, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = out.labels[i];
    // Mode assignment cycles deterministically within the class.
    const std::size_t mode = seen[static_cast<std::size_t>(c)]++ % modes;
    const double ang = 2.0 * std::numbers::pi * mode / static_cast<double>(modes);
    const double* u = &axes[(static_cast<std::size_t>(c) * 2 + 0) * d];
    const double* v = &axes[(static_cast<std::size_t>(c) * 2 + 1) * d];
    const double cu = sep * std::cos(ang);
    const double cv = sep * std::sin(ang);
    for (std::size_t j = 0; j < d; ++j)
      out.features.at(i, j) = cu * u[j] + cv * v[j] + noise * 0.28 * rng.normal();
  }
}

}  // namespace

Dataset generate_synthetic(SyntheticKind kind, std::size_t n, std::size_t d, std::size_t C,
                           std::uint64_t seed, double noise, std::size_t modes) {
  if (C < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
  if (n < C) throw ConfigError("generate_synthetic: n < C");
  if (d < 2) throw ConfigError("generate_synthetic: need d >= 2");
  if (noise < 0.0) throw ConfigError("generate_synthetic: negative noise");
  if (modes < 1) throw ConfigError("generate_synthetic: modes must be >= 1");
  if (modes > 1 && kind != SyntheticKind::blobs)
    throw ConfigError("generate_synthetic: modes > 1 is only defined for blobs");

  Dataset out;
  out.labels = balanced_labels(n, C);
  out.class_count = C;
  out.poison_mask.assign(n, 0);
  out.features = Tensor({n, d});
  out.name = std::string(synthetic_kind_name(kind)) + "-n" + std::to_string(n) + "-d" +
             std::to_string(d) + "-C" + std::to_string(C) + "-s" + std::to_string(seed);

  Rng rng = Rng(seed).derive("synthetic", static_cast<std::uint64_t>(kind));

  if (kind == SyntheticKind::blobs && modes > 1) {
    out.name += "-m" + std::to_string(modes);
    fill_multimodal_blobs(out, d, C, modes, noise, rng);
    rescale_to_pixels(out.features);
    out.validate();
    return out;
  }

  // Per-class anisotropy makes the informative plane matter more than the
  // noise dims, giving architecture choice something to buy.
  std::vector<double> stretch(C * 2);
  for (auto& s : stretch) s = rng.uniform(0.6, 1.4);

  for (std::size_t i = 0; i < n; ++i) {
    const int c = out.labels[i];
    double x = 0.0, y = 0.0;
    switch (kind) {
      case SyntheticKind::blobs: {
        const double ang = 2.0 * std::numbers::pi * c / static_cast<double>(C);
        const double sep = 2.0;
        x = sep * std::cos(ang) + noise * 0.9 * stretch[2 * c] * rng.normal();
        y = sep * std::sin(ang) + noise * 0.9 * stretch[2 * c + 1] * rng.normal();
        break;
      }
      case SyntheticKind::moons: {
        // Interleaved half-circle pairs; pairs beyond the first are rotated.
        const double u = rng.uniform();
        const double t = std::numbers::pi * u;
        double mx, my;
        if (c % 2 == 0) {
          mx = std::cos(t);
          my = std::sin(t);
        } else {
          mx = 1.0 - std::cos(t);
          my = 0.5 - std::sin(t);
        }
        const std::size_t pairs = (C + 1) / 2;
        const double rot = 2.0 * std::numbers::pi * (c / 2) / static_cast<double>(pairs);
        x = mx * std::cos(rot) - my * std::sin(rot);
        y = mx * std::sin(rot) + my * std::cos(rot);
        x += noise * 0.15 * rng.normal();
        y += noise * 0.15 * rng.normal();
        break;
      }
      case SyntheticKind::rings: {
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double r = (c + 1.0) + noise * 0.22 * rng.normal();
        x = r * std::cos(theta);
        y = r * std::sin(theta);
        break;
      }
    }
    out.features.at(i, 0) = x;
    out.features.at(i, 1) = y;
    for (std::size_t j = 2; j < d; ++j) out.features.at(i, j) = noise * rng.normal();
  }

  rescale_to_pixels(out.features);
  out.validate();
  return out;
}

namespace {

std::uint32_t read_be_u32(std::ifstream& is, const std::filesystem::path& p) {
  unsigned char b[4];
  const auto at = is.tellg();
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("idx " + p.string() + ": truncated at byte " +
                      std::to_string(static_cast<long long>(at)));
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t downsample_to) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw FormatError("idx " + images_path.string() + ": cannot open");
  const std::uint32_t img_magic = read_be_u32(imgs, images_path);
  if (img_magic != 0x00000803u)
    throw FormatError("idx " + images_path.string() + ": bad magic at byte 0 (got " +
                      std::to_string(img_magic) + ", want 2051)");
  const std::uint32_t n = read_be_u32(imgs, images_path);
  const std::uint32_t rows = read_be_u32(imgs, images_path);
  const std::uint32_t cols = read_be_u32(imgs, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw FormatError("idx " + labels_path.string() + ": cannot open");
  const std::uint32_t lab_magic = read_be_u32(labs, labels_path);
  if (lab_magic != 0x00000801u)
    throw FormatError("idx " + labels_path.string() + ": bad magic at byte 0 (got " +
                      std::to_string(lab_magic) + ", want 2049)");
  const std::uint32_t ln = read_be_u32(labs, labels_path);
  if (ln != n)
    throw FormatError("idx " + labels_path.string() + ": " + std::to_string(ln) +
                      " labels for " + std::to_string(n) + " images");

  std::size_t side = rows;
  if (downsample_to > 0 && downsample_to != rows) {
    if (rows != cols || downsample_to > rows || rows % downsample_to != 0)
      throw ConfigError("load_idx: cannot pool " + std::to_string(rows) + "x" +
                        std::to_string(cols) + " to " + std::to_string(downsample_to));
    side = downsample_to;
  }
  const std::size_t pool = rows / side;
  const std::size_t d = side * side;

  Dataset out;
  out.features = Tensor({n, d});
  out.labels.resize(n);
  out.poison_mask.assign(n, 0);
  out.name = images_path.stem().string();

  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = imgs.tellg();
    if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw FormatError("idx " + images_path.string() + ": truncated at byte " +
                        std::to_string(static_cast<long long>(at)));
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) {
        double acc = 0.0;
        for (std::size_t pr = 0; pr < pool; ++pr)
          for (std::size_t pc = 0; pc < pool; ++pc)
            acc += buf[(r * pool + pr) * cols + (c * pool + pc)];
        out.features.at(i, r * side + c) = acc / static_cast<double>(pool * pool);
      }
  }

  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = labs.tellg();
    char b;
    if (!labs.read(&b, 1))
      throw FormatError("idx " + labels_path.string() + ": truncated at byte " +
                        std::to_string(static_cast<long long>(at)));
    out.labels[i] = static_cast<unsigned char>(b);
    max_label = std::max(max_label, out.labels[i]);
  }
  out.class_count = static_cast<std::size_t>(max_label) + 1;
  out.validate();
  return out;
}

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  const double fr[4] = {spec.search_train, spec.search_val, spec.final_train, spec.test};
  double total = 0.0;
  for (const double f : fr) {
    if (f < 0.0) throw ConfigError("split: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

  // Per-class largest-remainder allocation keeps every split within one
  // sample of exact proportionality.
  std::vector<std::vector<std::size_t>> out_idx(4);
  Rng base(spec.seed);
  for (std::size_t c = 0; c < dataset.class_count; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.n(); ++i)
      if (dataset.labels[i] == static_cast<int>(c)) members.push_back(i);
    Rng rng = base.derive("split-class", c);
    rng.shuffle(members);

    const std::size_t m = members.size();
    std::size_t counts[4];
    double rem[4];
    std::size_t assigned = 0;
    for (int s = 0; s < 4; ++s) {
      const double quota = static_cast<double>(m) * fr[s];
      counts[s] = static_cast<std::size_t>(quota);
      rem[s] = quota - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    while (assigned < m) {
      int best = 0;
      for (int s = 1; s < 4; ++s)
        if (rem[s] > rem[best] + 1e-12) best = s;
      ++counts[best];
      rem[best] = -1.0;
      ++assigned;
    }
    std::size_t off = 0;
    for (int s = 0; s < 4; ++s) {
      for (std::size_t k = 0; k < counts[s]; ++k) out_idx[s].push_back(members[off + k]);
      off += counts[s];
    }
  }

  const char* names[4] = {"search_train", "search_val", "final_train", "test"};
  SplitResult result;
  Dataset* dsts[4] = {&result.search_train, &result.search_val, &result.final_train, &result.test};
  for (int s = 0; s < 4; ++s) {
    if (out_idx[s].empty()) throw ConfigError(std::string("split: ") + names[s] + " is empty");
    std::sort(out_idx[s].begin(), out_idx[s].end());
    *dsts[s] = dataset.subset(out_idx[s], dataset.name + "/" + names[s]);
  }
  return result;
}

Tensor augment(const Tensor& batch, const AugmentationSpec& spec, Rng& rng) {
  Tensor out = batch;
  if (!spec.enabled) return out;
  const std::size_t m = out.rows(), d = out.cols();

  std::size_t side = 0;
  if (spec.horizontal_flip || spec.shift_range > 0) {
    side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
    if (side * side != d)
      throw ConfigError("augment: grid transforms need square d, got " + std::to_string(d));
  }

  std::vector<double> sample(d);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * d;
    if (spec.horizontal_flip && rng.uniform() < 0.5) {
      for (std::size_t r = 0; r < side; ++r)
        std::reverse(row + r * side, row + (r + 1) * side);
    }
    if (spec.shift_range > 0) {
      const int dx = rng.uniform_int(-spec.shift_range, spec.shift_range);
      const int dy = rng.uniform_int(-spec.shift_range, spec.shift_range);
      std::fill(sample.begin(), sample.end(), 0.0);
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
          const long sr = static_cast<long>(r) - dy;
          const long sc = static_cast<long>(c) - dx;
          if (sr >= 0 && sr < static_cast<long>(side) && sc >= 0 && sc < static_cast<long>(side))
            sample[r * side + c] = row[static_cast<std::size_t>(sr) * side +
                                       static_cast<std::size_t>(sc)];
        }
      std::copy(sample.begin(), sample.end(), row);
    }
    if (spec.jitter_sigma > 0.0)
      for (std::size_t j = 0; j < d; ++j) row[j] += spec.jitter_sigma * rng.normal();
    if (spec.mask_prob > 0.0)
      for (std::size_t j = 0; j < d; ++j)
        if (rng.uniform() < spec.mask_prob) row[j] = 0.0;
    for (std::size_t j = 0; j < d; ++j) row[j] = clip_pixel(row[j]);
  }
  return out;
}

NormStats compute_norm_stats(const Dataset& stats_from) {
  const std::size_t n = stats_from.n(), d = stats_from.dim();
  if (n == 0) throw ContractError("compute_norm_stats: empty dataset");
  NormStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += stats_from.features.at(i, j);
  for (std::size_t j = 0; j < d; ++j) st.mean[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = stats_from.features.at(i, j) - st.mean[j];
      st.stddev[j] += delta * delta;
    }
  for (std::size_t j = 0; j < d; ++j) {
    st.stddev[j] = std::sqrt(st.stddev[j] / static_cast<double>(n));
    if (st.stddev[j] <= 0.0) {
      st.stddev[j] = 1.0;
      st.clamped_features.push_back(j);
    }
  }
  if (!st.clamped_features.empty())
    std::cerr << "warning: " << st.clamped_features.size()
              << " zero-variance feature(s), std clamped to 1 (dataset " << stats_from.name
              << ")\n";
  return st;
}

Tensor apply_norm(const Tensor& pixels, const NormStats& stats) {
  Tensor out = pixels;
  const std::size_t m = out.rows(), d = out.cols();
  if (d != stats.mean.size()) throw ShapeError("apply_norm: dimension mismatch");
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.data()[i * d + j] = (out.data()[i * d + j] - stats.mean[j]) / stats.stddev[j];
  return out;
}

Tensor invert_norm(const Tensor& standardized, const NormStats& stats) {
  Tensor out = standardized;
  const std::size_t m = out.rows(), d = out.cols();
  if (d != stats.mean.size()) throw ShapeError("invert_norm: dimension mismatch");
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.data()[i * d + j] = out.data()[i * d + j] * stats.stddev[j] + stats.mean[j];
  return out;
}

Dataset normalize(const Dataset& dataset, const NormStats& stats) {
  Dataset out = dataset;
  out.features = apply_norm(dataset.features, stats);
  return out;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("csv " + path.string() + ": cannot write");
  const std::size_t d = dataset.dim();
  for (std::size_t j = 0; j < d; ++j) os << 'f' << j << ',';
  os << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", dataset.features.at(i, j));
      os << buf << ',';
    }
    os << dataset.labels[i] << '\n';
  }
  if (!os) throw FormatError("csv " + path.string() + ": write failed");
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("csv " + path.string() + ": cannot open");
  std::string line;
  if (!std::getline(is, line)) throw FormatError("csv " + path.string() + ": empty file");

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label")
    throw FormatError("csv " + path.string() + ": header must end with 'label'");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "f" + std::to_string(j))
      throw FormatError("csv " + path.string() + ": expected column f" + std::to_string(j) +
                        ", got " + header[j]);

  std::vector<double> flat;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (col < d)
          flat.push_back(std::stod(cell));
        else if (col == d)
          labels.push_back(std::stoi(cell));
        else
          throw FormatError("");
      } catch (const std::exception&) {
        throw FormatError("csv " + path.string() + ": bad cell at line " + std::to_string(lineno));
      }
      ++col;
    }
    if (col != d + 1)
      throw FormatError("csv " + path.string() + ": wrong column count at line " +
                        std::to_string(lineno));
  }

  Dataset out;
  const std::size_t n = labels.size();
  out.features = Tensor({n, d}, std::move(flat));
  out.labels = std::move(labels);
  out.poison_mask.assign(n, 0);
  int max_label = 0;
  for (const int y : out.labels) {
    if (y < 0) throw FormatError("csv " + path.string() + ": negative label");
    max_label = std::max(max_label, y);
  }
  out.class_count = static_cast<std::size_t>(max_label) + 1;
  out.name = path.stem().string();
  out.validate();
  return out;
}

void save_poison_sidecar(const PoisonSidecar& sidecar, const std::filesystem::path& path) {
  nlohmann::json j;
  j["attack"] = sidecar.attack;
  j["p"] = sidecar.p;
  j["epsilon"] = sidecar.epsilon;
  j["seed"] = sidecar.seed;
  j["mask_indices"] = sidecar.mask_indices;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("sidecar " + path.string() + ": cannot write");
  os << j.dump(2) << '\n';
}

PoisonSidecar load_poison_sidecar(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("sidecar " + path.string() + ": cannot open");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sidecar " + path.string() + ": " + e.what());
  }
  PoisonSidecar s;
  try {
    s.attack = j.at("attack").get<std::string>();
    s.p = j.at("p").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.mask_indices = j.at("mask_indices").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sidecar " + path.string() + ": " + e.what());
  }
  return s;
}

void export_poisoned(const Dataset& dataset, const PoisonSidecar& sidecar,
                     const std::filesystem::path& csv_path) {
  save_csv(dataset, csv_path);
  if (dataset.any_poisoned()) {
    std::filesystem::path side = csv_path;
    side.replace_extension(".poison.json");
    save_poison_sidecar(sidecar, side);
  }
}

}  // namespace nasaudit

#include "vfseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "vfseg/error.hpp"

namespace vfseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<uint8_t> class_mask(const LabelVolume& v, int32_t c) {
  std::vector<uint8_t> m(v.labels.size());
  for (size_t i = 0; i < m.size(); ++i) m[i] = v.labels[i] == c ? 1 : 0;
  return m;
}

void check_pair(const LabelVolume& a, const LabelVolume& b) {
  if (a.shape != b.shape) throw Error(ErrorCode::ShapeMismatch, a.shape.str() + " vs " + b.shape.str());
}

// Lower envelope of parabolas along one line: out[p] = min_q f[q] + (s*(p-q))^2.
void envelope_1d(const std::vector<double>& f, double s, std::vector<double>& out, std::vector<int64_t>& v,
                 std::vector<double>& z) {
  const auto n = static_cast<int64_t>(f.size());
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (f[static_cast<size_t>(q)] == kInf) continue;
    const double xq = s * static_cast<double>(q);
    const double fq = f[static_cast<size_t>(q)] + xq * xq;
    while (k >= 0) {
      const int64_t r = v[static_cast<size_t>(k)];
      const double xr = s * static_cast<double>(r);
      const double sep = (fq - (f[static_cast<size_t>(r)] + xr * xr)) / (2.0 * (xq - xr));
      if (sep <= z[static_cast<size_t>(k)]) {
        --k;
      } else {
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = sep;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    }
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int64_t j = 0;
  for (int64_t p = 0; p < n; ++p) {
    const double xp = s * static_cast<double>(p);
    while (j < k && z[static_cast<size_t>(j) + 1] < xp) ++j;
    const int64_t q = v[static_cast<size_t>(j)];
    const double d = s * static_cast<double>(p - q);
    out[static_cast<size_t>(p)] = f[static_cast<size_t>(q)] + d * d;
  }
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

MetricsReport::Summary summarize(const std::vector<std::optional<double>>& values) {
  MetricsReport::Summary s;
  std::vector<double> defined;
  for (const auto& v : values) {
    if (v) {
      defined.push_back(*v);
    } else {
      ++s.undefined;
    }
  }
  s.count = static_cast<int>(defined.size());
  s.mean = mean_of(defined);
  s.std = std_of(defined, s.mean);
  return s;
}

}  // namespace

double dice_coefficient(const LabelVolume& pred, const LabelVolume& gt, int32_t c) {
  check_pair(pred, gt);
  int64_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const bool in_a = pred.labels[i] == c;
    const bool in_b = gt.labels[i] == c;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<uint8_t> surface_mask(const std::vector<uint8_t>& mask, const Shape3& shape) {
  std::vector<uint8_t> surf(mask.size(), 0);
  auto fg = [&](int64_t z, int64_t y, int64_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= shape.d || y >= shape.h || x >= shape.w) return false;
    return mask[static_cast<size_t>(shape.index(z, y, x))] != 0;
  };
  for (int64_t z = 0; z < shape.d; ++z) {
    for (int64_t y = 0; y < shape.h; ++y) {
      for (int64_t x = 0; x < shape.w; ++x) {
        if (!fg(z, y, x)) continue;
        const bool interior = fg(z - 1, y, x) && fg(z + 1, y, x) && fg(z, y - 1, x) && fg(z, y + 1, x) &&
                              fg(z, y, x - 1) && fg(z, y, x + 1);
        if (!interior) surf[static_cast<size_t>(shape.index(z, y, x))] = 1;
      }
    }
  }
  return surf;
}

std::vector<double> squared_distance_transform(const std::vector<uint8_t>& set, const Shape3& shape,
                                               const Spacing& spacing) {
  std::vector<double> dist(set.size());
  for (size_t i = 0; i < set.size(); ++i) dist[i] = set[i] ? 0.0 : kInf;

  const int64_t longest = std::max({shape.d, shape.h, shape.w});
  std::vector<double> line(static_cast<size_t>(longest)), out(static_cast<size_t>(longest));
  std::vector<int64_t> v(static_cast<size_t>(longest));
  std::vector<double> z(static_cast<size_t>(longest) + 1);

  // axis: 2 = W, 1 = H, 0 = D
  for (int axis = 2; axis >= 0; --axis) {
    const int64_t n = shape[axis];
    const int64_t stride = axis == 2 ? 1 : (axis == 1 ? shape.w : shape.h * shape.w);
    line.resize(static_cast<size_t>(n));
    out.resize(static_cast<size_t>(n));
    const int64_t a1 = axis == 0 ? shape.h : shape.d;
    const int64_t a2 = axis == 2 ? shape.h : shape.w;
    for (int64_t i = 0; i < a1; ++i) {
      for (int64_t j = 0; j < a2; ++j) {
        int64_t base = 0;
        if (axis == 2) base = shape.index(i, j, 0);
        if (axis == 1) base = shape.index(i, 0, j);
        if (axis == 0) base = shape.index(0, i, j);
        for (int64_t p = 0; p < n; ++p) line[static_cast<size_t>(p)] = dist[static_cast<size_t>(base + p * stride)];
        envelope_1d(line, spacing[static_cast<size_t>(axis)], out, v, z);
        for (int64_t p = 0; p < n; ++p) dist[static_cast<size_t>(base + p * stride)] = out[static_cast<size_t>(p)];
      }
    }
  }
  return dist;
}

std::optional<double> assd(const LabelVolume& pred, const LabelVolume& gt, int32_t c, const Spacing& spacing) {
  check_pair(pred, gt);
  if (pred.spacing != gt.spacing) {
    throw Error(ErrorCode::SpacingMismatch, "prediction and ground truth have different spacing");
  }
  for (double s : spacing) {
    if (!(s > 0.0)) throw Error(ErrorCode::SpacingMismatch, "spacing must be positive");
  }
  const auto sa = surface_mask(class_mask(pred, c), pred.shape);
  const auto sb = surface_mask(class_mask(gt, c), gt.shape);
  const auto na = std::count(sa.begin(), sa.end(), uint8_t{1});
  const auto nb = std::count(sb.begin(), sb.end(), uint8_t{1});
  if (na == 0 || nb == 0) return std::nullopt;

  const auto to_b = squared_distance_transform(sb, gt.shape, spacing);
  const auto to_a = squared_distance_transform(sa, pred.shape, spacing);
  double sum = 0.0;
  for (size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]) sum += std::sqrt(to_b[i]);
  }
  for (size_t i = 0; i < sb.size(); ++i) {
    if (sb[i]) sum += std::sqrt(to_a[i]);
  }
  return sum / static_cast<double>(na + nb);
}

CaseMetrics evaluate_case(const std::string& id, const LabelVolume& pred, const LabelVolume& gt) {
  check_pair(pred, gt);
  CaseMetrics m{id, {}};
  for (int32_t c = 1; c < gt.num_classes; ++c) {
    m.classes.push_back(ClassMetrics{dice_coefficient(pred, gt, c), assd(pred, gt, c, gt.spacing)});
  }
  return m;
}

double MetricsReport::mean_dice(size_t case_index) const {
  const auto& cs = cases.at(case_index).classes;
  double s = 0.0;
  for (const auto& c : cs) s += c.dice;
  return cs.empty() ? 0.0 : s / static_cast<double>(cs.size());
}

std::optional<double> MetricsReport::mean_assd(size_t case_index) const {
  double s = 0.0;
  int n = 0;
  for (const auto& c : cases.at(case_index).classes) {
    if (c.assd) {
      s += *c.assd;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

MetricsReport::Summary MetricsReport::dice_summary(int32_t c) const {
  std::vector<std::optional<double>> v;
  for (const auto& cs : cases) v.emplace_back(cs.classes.at(static_cast<size_t>(c - 1)).dice);
  return summarize(v);
}

MetricsReport::Summary MetricsReport::assd_summary(int32_t c) const {
  std::vector<std::optional<double>> v;
  for (const auto& cs : cases) v.push_back(cs.classes.at(static_cast<size_t>(c - 1)).assd);
  return summarize(v);
}

MetricsReport::Summary MetricsReport::mean_dice_summary() const {
  std::vector<std::optional<double>> v;
  for (size_t i = 0; i < cases.size(); ++i) v.emplace_back(mean_dice(i));
  return summarize(v);
}

MetricsReport::Summary MetricsReport::mean_assd_summary() const {
  std::vector<std::optional<double>> v;
  for (size_t i = 0; i < cases.size(); ++i) v.push_back(mean_assd(i));
  return summarize(v);
}

std::string MetricsReport::to_tsv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "case\tclass\tdice\tassd\n";
  for (const auto& cs : cases) {
    for (size_t k = 0; k < cs.classes.size(); ++k) {
      os << cs.id << '\t' << (k + 1) << '\t' << cs.classes[k].dice << '\t';
      if (cs.classes[k].assd) {
        os << *cs.classes[k].assd;
      } else {
        os << "nan";
      }
      os << '\n';
    }
  }
  return os.str();
}

MetricsReport MetricsReport::from_tsv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "case\tclass\tdice\tassd") throw Error(ErrorCode::MalformedHeader, "unexpected report header");
  MetricsReport r;
  std::map<std::string, size_t> index;
  int32_t max_class = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, cls, dice, dist;
    std::getline(ls, id, '\t');
    std::getline(ls, cls, '\t');
    std::getline(ls, dice, '\t');
    std::getline(ls, dist, '\t');
    auto [it, inserted] = index.try_emplace(id, r.cases.size());
    if (inserted) r.cases.push_back(CaseMetrics{id, {}});
    auto& cs = r.cases[it->second];
    const int32_t c = std::stoi(cls);
    if (static_cast<int32_t>(cs.classes.size()) != c - 1) throw Error(ErrorCode::MalformedHeader, "classes out of order");
    ClassMetrics m{std::stod(dice), std::nullopt};
    if (dist != "nan") m.assd = std::stod(dist);
    cs.classes.push_back(m);
    max_class = std::max(max_class, c);
  }
  r.num_classes = max_class + 1;
  return r;
}

std::string MetricsReport::to_text_table() const {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(10) << "Class" << std::right << std::setw(20) << "Dice (%)" << std::setw(20)
     << "ASSD (mm)" << '\n';
  int footnotes = 0;
  auto row = [&](const std::string& name, const Summary& d, const Summary& a) {
    std::ostringstream dc, ac;
    dc << std::fixed << std::setprecision(2) << d.mean * 100.0 << "±" << d.std * 100.0;
    if (a.count > 0) {
      ac << std::fixed << std::setprecision(2) << a.mean << "±" << a.std;
    } else {
      ac << "n/a";
    }
    if (a.undefined > 0) {
      ac << " *" << a.undefined;
      footnotes += a.undefined;
    }
    // "±" is two bytes in UTF-8; pad by one extra column to keep alignment.
    os << std::left << std::setw(10) << name << std::right << std::setw(21) << dc.str() << std::setw(a.count > 0 ? 21 : 20)
       << ac.str() << '\n';
  };
  for (int32_t c = 1; c < num_classes; ++c) row(std::to_string(c), dice_summary(c), assd_summary(c));
  row("Average", mean_dice_summary(), mean_assd_summary());
  if (footnotes > 0) {
    os << "* entries with an empty predicted or reference surface, excluded from the ASSD statistics\n";
  }
  return os.str();
}

void MetricsReport::save(const std::filesystem::path& tsv_path) const {
  std::ofstream os(tsv_path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + tsv_path.string());
  os << to_tsv();
}

}  // namespace vfseg

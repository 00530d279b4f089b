#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qpat/diffusion.hpp"
#include "qpat/errors.hpp"
#include "qpat/field.hpp"
#include "qpat/forward.hpp"
#include "qpat/phantom.hpp"
#include "qpat/rng.hpp"

namespace qpat {

struct SampleRecord {
  int id = -1;
  std::string mu_a, mu_s_prime, fluence, pat; // paths relative to the manifest
};

/// Index of one generated dataset: the split assignment plus the file
/// locations of every sample's four fields.
struct DatasetManifest {
  int wavelength_nm = 0;
  std::uint64_t seed = 0;
  GridGeometry geometry;
  std::vector<int> train_ids, val_ids, test_ids;
  std::vector<SampleRecord> samples;
  std::filesystem::path dir; // set on load/build; not serialized

  const SampleRecord& record(int id) const {
    for (const auto& r : samples)
      if (r.id == id) return r;
    throw config_error("manifest: unknown sample id " + std::to_string(id));
  }
};

/// 80/10/10 split by integer division; remainders go to the test split.
inline void split_ids(int count, std::uint64_t seed, std::vector<int>& train,
                      std::vector<int>& val, std::vector<int>& test) {
  std::vector<int> ids(count);
  for (int i = 0; i < count; ++i) ids[i] = i;
  Rng rng(mix_seed(seed, 0x5917ULL));
  for (int i = count - 1; i > 0; --i)
    std::swap(ids[i], ids[std::size_t(rng.uniform_index(std::uint64_t(i) + 1))]);
  const int n_train = count * 8 / 10;
  const int n_val = count / 10;
  train.assign(ids.begin(), ids.begin() + n_train);
  val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  test.assign(ids.begin() + n_train + n_val, ids.end());
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "qpat-dataset-1";
  j["wavelength_nm"] = m.wavelength_nm;
  j["seed"] = m.seed;
  j["geometry"] = {{"width", m.geometry.width},
                   {"height", m.geometry.height},
                   {"spacing_mm", m.geometry.spacing_mm},
                   {"domain_radius_mm", m.geometry.domain_radius_mm}};
  j["splits"] = {{"train", m.train_ids}, {"val", m.val_ids}, {"test", m.test_ids}};
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : m.samples)
    samples.push_back({{"id", r.id},
                       {"mu_a", r.mu_a},
                       {"mu_s_prime", r.mu_s_prime},
                       {"fluence", r.fluence},
                       {"pat", r.pat}});
  j["samples"] = samples;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("load_manifest: " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != std::string("qpat-dataset-1"))
    throw format_error("load_manifest: unrecognized manifest format in " + path.string());
  DatasetManifest m;
  try {
    m.wavelength_nm = j.at("wavelength_nm").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& g = j.at("geometry");
    m.geometry = {g.at("width").get<int>(), g.at("height").get<int>(),
                  g.at("spacing_mm").get<double>(), g.at("domain_radius_mm").get<double>()};
    m.train_ids = j.at("splits").at("train").get<std::vector<int>>();
    m.val_ids = j.at("splits").at("val").get<std::vector<int>>();
    m.test_ids = j.at("splits").at("test").get<std::vector<int>>();
    for (const auto& s : j.at("samples"))
      m.samples.push_back({s.at("id").get<int>(), s.at("mu_a").get<std::string>(),
                           s.at("mu_s_prime").get<std::string>(),
                           s.at("fluence").get<std::string>(), s.at("pat").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw format_error("load_manifest: " + path.string() + ": " + e.what());
  }
  m.dir = path.parent_path();
  return m;
}

inline PhantomSample load_sample(const DatasetManifest& m, int id) {
  const auto& r = m.record(id);
  PhantomSample s;
  s.mu_a = load_field(m.dir / r.mu_a);
  s.mu_s_prime = load_field(m.dir / r.mu_s_prime);
  s.fluence = load_field(m.dir / r.fluence);
  s.pat_image = load_field(m.dir / r.pat);
  s.wavelength_nm = m.wavelength_nm;
  s.sample_id = id;
  return s;
}

struct DatasetOptions {
  SourceRing sources;
  double gruneisen = 1.0;
  double noise_variance = 2e-5;
  double solver_tol = 1e-10;
  int solver_max_iter = 0; // 0 = solver default
};

/// Renders one spec end to end: coefficients, exact fluence (max-normalized),
/// noisy image. The noise stream is derived from (seed, wavelength, id).
inline PhantomSample render_sample(const PhantomSpec& spec, const OpticsTable& optics,
                                   int wavelength_nm, int id, std::uint64_t seed,
                                   const DatasetOptions& opt) {
  PhantomSample s;
  s.sample_id = id;
  s.wavelength_nm = wavelength_nm;
  auto fields = generate_phantom(spec, optics, wavelength_nm);
  s.mu_a = std::move(fields.first);
  s.mu_s_prime = std::move(fields.second);
  auto sys = assemble_system(spec.geometry, s.mu_a, s.mu_s_prime, opt.sources);
  s.fluence = max_normalize(solve_fluence(sys, opt.solver_tol, opt.solver_max_iter));
  ForwardConfig fwd;
  fwd.gruneisen = opt.gruneisen;
  fwd.noise_variance = opt.noise_variance;
  fwd.noise_seed = mix_seed(seed, std::uint64_t(wavelength_nm), std::uint64_t(id));
  s.pat_image = add_noise(forward_pressure(s.mu_a, s.fluence, fwd), fwd);
  return s;
}

/// Builds a full dataset: renders every spec, persists the four fields per
/// sample and writes the manifest. On any failure all files written by this
/// call are removed and the error is rethrown with the sample id attached.
inline DatasetManifest build_dataset(const std::vector<PhantomSpec>& specs,
                                     const OpticsTable& optics, int wavelength_nm,
                                     const std::filesystem::path& out_dir,
                                     std::uint64_t seed, const DatasetOptions& opt) {
  if (specs.size() < 10)
    throw config_error("build_dataset: need at least 10 specs for an 80/10/10 split");
  std::filesystem::create_directories(out_dir);

  DatasetManifest m;
  m.wavelength_nm = wavelength_nm;
  m.seed = seed;
  m.geometry = specs.front().geometry;
  m.dir = out_dir;
  m.samples.resize(specs.size());
  split_ids(int(specs.size()), seed, m.train_ids, m.val_ids, m.test_ids);

  std::atomic<bool> failed{false};
  std::string first_error;
  std::vector<std::filesystem::path> written(specs.size() * 4);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t id = 0; id < std::ptrdiff_t(specs.size()); ++id) {
    if (failed.load()) continue;
    try {
      PhantomSample s = render_sample(specs[id], optics, wavelength_nm, int(id), seed, opt);
      char name[64];
      auto file_of = [&](const char* kind) {
        std::snprintf(name, sizeof(name), "sample_%04d_%s.f2d", int(id), kind);
        return std::string(name);
      };
      SampleRecord rec;
      rec.id = int(id);
      rec.mu_a = file_of("mu_a");
      rec.mu_s_prime = file_of("mu_s");
      rec.fluence = file_of("fluence");
      rec.pat = file_of("pat");
      save_field(s.mu_a, out_dir / rec.mu_a);
      save_field(s.mu_s_prime, out_dir / rec.mu_s_prime);
      save_field(s.fluence, out_dir / rec.fluence);
      save_field(s.pat_image, out_dir / rec.pat);
      written[id * 4 + 0] = out_dir / rec.mu_a;
      written[id * 4 + 1] = out_dir / rec.mu_s_prime;
      written[id * 4 + 2] = out_dir / rec.fluence;
      written[id * 4 + 3] = out_dir / rec.pat;
      m.samples[id] = rec;
    } catch (const std::exception& e) {
#pragma omp critical
      {
        if (!failed.exchange(true))
          first_error = "build_dataset: sample " + std::to_string(id) + ": " + e.what();
      }
    }
  }

  if (failed.load()) {
    std::error_code ec;
    for (const auto& p : written)
      if (!p.empty()) std::filesystem::remove(p, ec);
    throw solver_error(first_error);
  }

  save_manifest(m, out_dir / "manifest.json");
  return m;
}

} // namespace qpat

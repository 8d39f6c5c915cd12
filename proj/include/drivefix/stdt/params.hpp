#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

#include "drivefix/ad/tape.hpp"
#include "drivefix/core/rng.hpp"

namespace drivefix {

using json = nlohmann::ordered_json;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named dense float64 tensors with matching gradient buffers. Names are
// insertion-independent (ordered map) so iteration, checkpoints, and optimizer
// sweeps are deterministic.
struct ParamStore {
  struct Entry {
    ad::Mat val;
    ad::Mat grad;
  };
  std::map<std::string, Entry> tensors;

  ad::Mat& create(const std::string& name, Eigen::Index r, Eigen::Index c) {
    auto [it, inserted] = tensors.try_emplace(name);
    if (inserted) {
      it->second.val = ad::Mat::Zero(r, c);
      it->second.grad = ad::Mat::Zero(r, c);
    } else if (it->second.val.rows() != r || it->second.val.cols() != c) {
      throw CheckpointError("parameter shape conflict for " + name);
    }
    return it->second.val;
  }

  Entry& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("unknown parameter " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  // Tape leaf backed by this store's value and gradient buffers.
  ad::Var use(ad::Tape& tape, const std::string& name) {
    Entry& e = at(name);
    return tape.leaf(e.val, &e.grad);
  }

  void zero_grad() {
    for (auto& [name, e] : tensors) e.grad.setZero();
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [name, e] : tensors) n += e.val.size();
    return n;
  }
};

namespace detail {

inline std::string tensor_filename(const std::string& name) {
  std::string f = name;
  for (char& c : f)
    if (c == '/') c = '.';
  return f + ".bin";
}

inline void write_tensor(const std::filesystem::path& path, const ad::Mat& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path.string());
  char header[64];
  int n = std::snprintf(header, sizeof(header), "drivefix-tensor f64 %lld %lld\n",
                        static_cast<long long>(m.rows()), static_cast<long long>(m.cols()));
  os.write(header, n);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    os.write(reinterpret_cast<const char*>(m.row(i).eval().data()),
             static_cast<std::streamsize>(m.cols() * sizeof(double)));
  if (!os) throw CheckpointError("short write to " + path.string());
}

inline ad::Mat read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read " + path.string());
  std::string header;
  std::getline(is, header);
  char tag[32];
  long long r = 0, c = 0;
  if (std::sscanf(header.c_str(), "%31s f64 %lld %lld", tag, &r, &c) != 3 ||
      std::string(tag) != "drivefix-tensor" || r < 0 || c < 0)
    throw CheckpointError("bad tensor header in " + path.string());
  ad::Mat m(r, c);
  for (long long i = 0; i < r; ++i) {
    Eigen::RowVectorXd row(c);
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(c * sizeof(double)));
    m.row(i) = row;
  }
  if (!is) throw CheckpointError("short read from " + path.string());
  return m;
}

}  // namespace detail

// Checkpoint directory: manifest.json plus one binary file per tensor. The
// manifest records shapes, so loads validate before any tensor is touched.
inline void save_checkpoint(const std::filesystem::path& dir, const ParamStore& ps,
                            const json& meta) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "drivefix-checkpoint-v1";
  manifest["meta"] = meta;
  json tensors = json::array();
  for (const auto& [name, e] : ps.tensors) {
    std::string file = detail::tensor_filename(name);
    tensors.push_back({{"name", name},
                       {"rows", e.val.rows()},
                       {"cols", e.val.cols()},
                       {"file", file}});
    detail::write_tensor(dir / file, e.val);
  }
  manifest["tensors"] = std::move(tensors);
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw CheckpointError("cannot write manifest in " + dir.string());
}

struct LoadedCheckpoint {
  json meta;
  ParamStore params;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw CheckpointError("missing manifest.json in " + dir.string());
  json manifest = json::parse(is);
  if (manifest.value("format", "") != "drivefix-checkpoint-v1")
    throw CheckpointError("unrecognized checkpoint format in " + dir.string());
  LoadedCheckpoint out;
  out.meta = manifest.value("meta", json::object());
  for (const auto& jt : manifest["tensors"]) {
    std::string name = jt["name"];
    ad::Mat m = detail::read_tensor(dir / jt["file"].get<std::string>());
    if (m.rows() != jt["rows"].get<long long>() || m.cols() != jt["cols"].get<long long>())
      throw CheckpointError("tensor " + name + " shape disagrees with manifest");
    auto& e = out.params.tensors[name];
    e.val = std::move(m);
    e.grad = ad::Mat::Zero(e.val.rows(), e.val.cols());
  }
  return out;
}

}  // namespace drivefix

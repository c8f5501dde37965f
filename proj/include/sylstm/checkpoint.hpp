// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Binary checkpoint container for SyLSTM parameters.
 *
 * Layout (all integers little-endian):
 *
 *   "SYLSTMCK"                 8-byte magic
 *   u32 version                currently 1
 *   u64 header length, bytes   JSON: model config, vocabulary hash, metadata
 *   u32 tensor count
 *   per tensor:
 *     u32 name length, name bytes
 *     u32 dtype                0 = float32, 1 = float64 (IEEE-754)
 *     u64 rows, u64 cols
 *     rows * cols values, row-major
 *   u64 FNV-1a hash of every preceding byte
 *
 * Tensors are the trainable parameters (Params::for_each names), the
 * batch-norm running statistics, and optionally the Adam moments under the
 * prefixes "adam.m." and "adam.v.".
 */
#pragma once

#include "sylstm/model.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <sstream>

namespace sylstm::checkpoint {

inline constexpr char kMagic[8] = {'S', 'Y', 'L', 'S', 'T', 'M', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

/// Bookkeeping stored next to the tensors.
struct Metadata {
  std::uint64_t vocab_hash = 0;
  std::string task;
  std::vector<std::string> classes;
  std::size_t epoch = 0;
  double dev_wf1 = 0.0;
  std::uint64_t seed = 0;
  std::size_t optimizer_step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

template <typename T> struct Contents {
  SyLSTM<T> model;
  Metadata meta;
  std::optional<Params<T>> adam_m, adam_v;
};

namespace detail {

template <typename T> constexpr std::uint32_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0u : 1u;
}

template <typename T> void put_tensor(std::ostream &out, const std::string &name, const Mat<T> &m) {
  io::put_string(out, name);
  io::put_le<std::uint32_t>(out, dtype_code<T>());
  io::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  io::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      io::put_le<T>(out, m(i, j));
}

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct RawTensor {
  std::uint32_t dtype = 0;
  std::uint64_t rows = 0, cols = 0;
  std::streamoff offset = 0; ///< start of the values in the stream
};

} // namespace detail

template <typename T>
std::string serialize(const SyLSTM<T> &model, const Metadata &meta,
                      const Params<T> *adam_m = nullptr, const Params<T> *adam_v = nullptr) {
  nlohmann::json header = {{"format", "sylstm-checkpoint"},
                           {"model", model.config.to_json()},
                           {"vocab_hash", detail::hex(meta.vocab_hash)},
                           {"vocab_size", model.vocab_size()},
                           {"embedding_trainable", model.embedding_trainable},
                           {"task", meta.task},
                           {"classes", meta.classes},
                           {"epoch", meta.epoch},
                           {"dev_wf1", meta.dev_wf1},
                           {"seed", meta.seed},
                           {"optimizer_step", meta.optimizer_step},
                           {"extra", meta.extra}};
  const std::string hjson = header.dump();
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 8);
  io::put_le<std::uint32_t>(out, kVersion);
  io::put_le<std::uint64_t>(out, hjson.size());
  out << hjson;
  std::uint32_t count = 0;
  std::ostringstream body(std::ios::binary);
  model.params.for_each([&](const std::string &name, const Mat<T> &m, ParamKind) {
    detail::put_tensor(body, name, m);
    ++count;
  });
  model.buffers.for_each([&](const std::string &name, const Mat<T> &m) {
    detail::put_tensor(body, name, m);
    ++count;
  });
  if (adam_m && adam_v) {
    adam_m->for_each([&](const std::string &name, const Mat<T> &m, ParamKind) {
      detail::put_tensor(body, "adam.m." + name, m);
      ++count;
    });
    adam_v->for_each([&](const std::string &name, const Mat<T> &m, ParamKind) {
      detail::put_tensor(body, "adam.v." + name, m);
      ++count;
    });
  }
  io::put_le<std::uint32_t>(out, count);
  out << body.str();
  std::string bytes = out.str();
  std::ostringstream tail(std::ios::binary);
  io::put_le<std::uint64_t>(tail, fnv1a(bytes));
  return bytes + tail.str();
}

/// Parse a checkpoint buffer; any structural damage raises IntegrityError.
template <typename T> Contents<T> deserialize(std::string_view buf) {
  auto fail = [](const std::string &what) -> IntegrityError {
    return IntegrityError("checkpoint: " + what);
  };
  if (buf.size() < 8 + 4 + 8 + 4 + 8 || !std::equal(kMagic, kMagic + 8, buf.begin()))
    throw fail("bad magic or truncated file");
  const std::size_t body_end = buf.size() - 8;
  std::istringstream in(std::string(buf.substr(8)), std::ios::binary);
  std::istringstream tail(std::string(buf.substr(body_end)), std::ios::binary);
  if (io::get_le<std::uint64_t>(tail) != fnv1a(buf.substr(0, body_end)))
    throw fail("checksum mismatch");
  const std::size_t remaining_base = body_end - 8;
  auto remaining = [&] {
    return remaining_base - static_cast<std::size_t>(in.tellg());
  };
  try {
    const auto version = io::get_le<std::uint32_t>(in);
    if (version != kVersion)
      throw fail("unsupported version " + std::to_string(version));
    const auto hlen = io::get_le<std::uint64_t>(in);
    if (hlen > remaining())
      throw fail("header length out of range");
    std::string hjson(hlen, '\0');
    in.read(hjson.data(), static_cast<std::streamsize>(hlen));
    const auto header = nlohmann::json::parse(hjson);
    const auto count = io::get_le<std::uint32_t>(in);
    std::map<std::string, detail::RawTensor> tensors;
    for (std::uint32_t k = 0; k < count; ++k) {
      const std::string name = io::get_string(in);
      detail::RawTensor t;
      t.dtype = io::get_le<std::uint32_t>(in);
      t.rows = io::get_le<std::uint64_t>(in);
      t.cols = io::get_le<std::uint64_t>(in);
      if (t.dtype > 1)
        throw fail("unknown dtype for tensor " + name);
      const std::uint64_t width = t.dtype == 0 ? 4 : 8;
      if (t.cols != 0 && t.rows > remaining() / width / t.cols)
        throw fail("tensor " + name + " overruns the file");
      t.offset = in.tellg();
      in.seekg(static_cast<std::streamoff>(t.rows * t.cols * width), std::ios::cur);
      if (!tensors.emplace(name, t).second)
        throw fail("duplicate tensor " + name);
    }
    if (remaining() != 0)
      throw fail("trailing bytes before checksum");

    Contents<T> c;
    ModelConfig cfg;
    try {
      cfg = ModelConfig::from_json(header.at("model"));
    } catch (const ConfigError &e) {
      throw fail(e.what());
    }
    const std::size_t vocab_size = header.at("vocab_size");
    // Allocate shapes through init_params, then overwrite every tensor.
    EmbeddingMatrix<T> emb;
    emb.values = Mat<T>::Zero(static_cast<Eigen::Index>(vocab_size),
                              static_cast<Eigen::Index>(cfg.d_w));
    emb.trainable = header.at("embedding_trainable");
    c.model = init_params(cfg, emb, 0);

    auto load = [&](const std::string &name, Mat<T> &m) {
      auto it = tensors.find(name);
      if (it == tensors.end())
        throw fail("missing tensor " + name);
      const auto &t = it->second;
      if (t.rows != static_cast<std::uint64_t>(m.rows()) ||
          t.cols != static_cast<std::uint64_t>(m.cols()))
        throw fail("tensor " + name + " has the wrong shape");
      in.clear();
      in.seekg(t.offset);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          m(i, j) = t.dtype == 0 ? static_cast<T>(io::get_le<float>(in))
                                 : static_cast<T>(io::get_le<double>(in));
    };
    c.model.params.for_each([&](const std::string &n, Mat<T> &m, ParamKind) { load(n, m); });
    c.model.buffers.for_each([&](const std::string &n, Mat<T> &m) { load(n, m); });
    if (tensors.count("adam.m.embedding")) {
      c.adam_m = c.model.params.zeros_like();
      c.adam_v = c.model.params.zeros_like();
      c.adam_m->for_each([&](const std::string &n, Mat<T> &m, ParamKind) { load("adam.m." + n, m); });
      c.adam_v->for_each([&](const std::string &n, Mat<T> &m, ParamKind) { load("adam.v." + n, m); });
    }

    auto &meta = c.meta;
    meta.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    meta.task = header.at("task");
    meta.classes = header.at("classes").get<std::vector<std::string>>();
    meta.epoch = header.at("epoch");
    meta.dev_wf1 = header.at("dev_wf1");
    meta.seed = header.at("seed");
    meta.optimizer_step = header.at("optimizer_step");
    meta.extra = header.value("extra", nlohmann::json::object());
    if (meta.classes.size() != cfg.n_classes)
      throw fail("class list does not match n_classes");
    return c;
  } catch (const nlohmann::json::exception &e) {
    throw fail(std::string("malformed header: ") + e.what());
  } catch (const std::out_of_range &e) {
    throw fail(std::string("truncated: ") + e.what());
  } catch (const std::invalid_argument &e) {
    throw fail(std::string("malformed field: ") + e.what());
  }
}

template <typename T>
void save(const std::filesystem::path &path, const SyLSTM<T> &model, const Metadata &meta,
          const Params<T> *adam_m = nullptr, const Params<T> *adam_v = nullptr) {
  const std::string bytes = serialize(model, meta, adam_m, adam_v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("short write to " + path.string());
}

template <typename T> Contents<T> load(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize<T>(bytes);
}

} // namespace sylstm::checkpoint

// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace resformer {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'S', 'C', 'K'};

std::uint64_t fnv1a(const char* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    buffer_.append(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buffer_.append(s);
  }
  template <typename Scalar>
  void put_tensor(const std::string& name, const Tensor<Scalar>& t) {
    put_string(name);
    put(static_cast<std::uint8_t>(sizeof(Scalar) == 4 ? 0 : 1));
    put(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put(static_cast<std::uint64_t>(d));
    buffer_.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  }
  std::string& buffer() { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(path_ + ": " + message);
  }
  void need(std::size_t bytes) const {
    if (pos_ + bytes > data_.size()) fail("truncated checkpoint");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string get_string() { return get_bytes(get<std::uint32_t>()); }
  std::size_t position() const { return pos_; }

 private:
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  std::uint8_t dtype = 0;
  Shape shape;
  std::string bytes;
};

struct Contents {
  std::uint64_t digest = 0;
  std::string echo;
  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, FiringRateEMA> rates;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Contents parse(const std::string& data, const std::string& path, bool header_only) {
  Reader r(data, path);
  if (r.get_bytes(4) != std::string(kMagic, 4)) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  if (data.size() < 16) r.fail("truncated checkpoint");
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, data.data() + data.size() - 8, 8);
  if (stored_sum != fnv1a(data.data(), data.size() - 8)) r.fail("checksum mismatch (file corrupt)");

  Contents c;
  c.digest = r.get<std::uint64_t>();
  c.echo = r.get_bytes(r.get<std::uint64_t>());
  if (header_only) return c;
  const auto tensor_count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < tensor_count; ++i) {
    const std::string name = r.get_string();
    StoredTensor t;
    t.dtype = r.get<std::uint8_t>();
    if (t.dtype > 1) r.fail("tensor " + name + " has unknown dtype tag " + std::to_string(t.dtype));
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    const std::size_t width = t.dtype == 0 ? 4 : 8;
    t.bytes = r.get_bytes(static_cast<std::size_t>(numel(t.shape)) * width);
    c.tensors.emplace(name, std::move(t));
  }
  const auto rate_count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < rate_count; ++i) {
    const std::string name = r.get_string();
    FiringRateEMA ema;
    ema.initialized = r.get<std::uint8_t>() != 0;
    ema.value = r.get<double>();
    c.rates.emplace(name, ema);
  }
  if (r.position() != data.size() - 8) r.fail("trailing bytes before checksum");
  return c;
}

template <typename Scalar>
void restore(const Contents& c, const std::string& name, Tensor<Scalar>& target, const std::string& path) {
  const auto it = c.tensors.find(name);
  if (it == c.tensors.end()) throw FormatError(path + ": missing tensor " + name);
  const StoredTensor& t = it->second;
  if (t.shape != target.shape()) {
    throw FormatError(path + ": tensor " + name + " has shape " + to_string(t.shape) + ", model expects " +
                      to_string(target.shape()));
  }
  if (t.dtype == 0) {
    Eigen::ArrayXf values(target.size());
    std::memcpy(values.data(), t.bytes.data(), t.bytes.size());
    target.array() = values.template cast<Scalar>();
  } else {
    Eigen::ArrayXd values(target.size());
    std::memcpy(values.data(), t.bytes.data(), t.bytes.size());
    target.array() = values.template cast<Scalar>();
  }
}

}  // namespace

template <typename Scalar>
void save_checkpoint(Model<Scalar>& model, const std::string& path) {
  StateRefs<Scalar> refs = model.state();
  Writer w;
  w.buffer().append(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put(model.config().digest());
  const std::string echo = model.config().echo();
  w.put(static_cast<std::uint64_t>(echo.size()));
  w.buffer().append(echo);
  w.put(static_cast<std::uint64_t>(refs.parameters.size() + 2 * refs.batchnorms.size()));
  for (Parameter<Scalar>* p : refs.parameters) w.put_tensor(p->name(), p->value());
  for (const auto& [name, bn] : refs.batchnorms) {
    w.put_tensor(name + ".running_mean", bn->running_mean);
    w.put_tensor(name + ".running_var", bn->running_var);
  }
  w.put(static_cast<std::uint64_t>(refs.rates.size()));
  for (const auto& [name, ema] : refs.rates) {
    w.put_string(name);
    w.put(static_cast<std::uint8_t>(ema->initialized ? 1 : 0));
    w.put(ema->value);
  }
  w.put(fnv1a(w.buffer().data(), w.buffer().size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
}

template <typename Scalar>
void load_checkpoint(Model<Scalar>& model, const std::string& path) {
  const std::string data = read_file(path);
  const Contents c = parse(data, path, false);
  if (c.digest != model.config().digest()) {
    throw FormatError(path + ": checkpoint was saved for a different config:\n" + c.echo);
  }
  StateRefs<Scalar> refs = model.state();
  for (Parameter<Scalar>* p : refs.parameters) restore(c, p->name(), p->value(), path);
  for (const auto& [name, bn] : refs.batchnorms) {
    restore(c, name + ".running_mean", bn->running_mean, path);
    restore(c, name + ".running_var", bn->running_var, path);
  }
  for (const auto& [name, ema] : refs.rates) {
    const auto it = c.rates.find(name);
    if (it == c.rates.end()) throw FormatError(path + ": missing firing-rate EMA " + name);
    ema->value = it->second.value;
    ema->initialized = it->second.initialized;
  }
}

ModelConfig read_checkpoint_config(const std::string& path) {
  const std::string data = read_file(path);
  const Contents c = parse(data, path, true);
  std::istringstream echo(c.echo);
  return parse_config(echo, path);
}

template void save_checkpoint(Model<float>&, const std::string&);
template void save_checkpoint(Model<double>&, const std::string&);
template void load_checkpoint(Model<float>&, const std::string&);
template void load_checkpoint(Model<double>&, const std::string&);

}  // namespace resformer

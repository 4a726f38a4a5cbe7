#include "oescn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace oescn {

namespace {

constexpr char kMagic[8] = {'O', 'E', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_raw(os, &v, sizeof(T));
}

void read_raw(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(std::string("checkpoint: truncated while reading ") + what);
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  read_raw(is, &v, sizeof(T), what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState* adam) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for write");

  write_raw(os, kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.items.size()));
  std::size_t trainable = 0;
  for (const auto& item : params.items) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(item.name.size()));
    write_raw(os, item.name.data(), item.name.size());
    write_pod<std::uint8_t>(os, item.trainable ? 1 : 0);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(item.value.ndim()));
    for (std::size_t d : item.value.shape)
      write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    write_raw(os, item.value.values.data(),
              item.value.numel() * sizeof(double));
    if (item.trainable) ++trainable;
  }

  if (adam) {
    if (adam->m.size() != trainable)
      throw InvalidArgument(
          "checkpoint: adam state does not match trainable parameter count");
    write_pod<std::uint8_t>(os, 1);
    write_pod<double>(os, adam->cfg.lr);
    write_pod<double>(os, adam->cfg.beta1);
    write_pod<double>(os, adam->cfg.beta2);
    write_pod<double>(os, adam->cfg.eps);
    write_pod<std::uint64_t>(os, adam->step_count);
    for (std::size_t i = 0; i < adam->m.size(); ++i) {
      write_raw(os, adam->m[i].values.data(),
                adam->m[i].numel() * sizeof(double));
      write_raw(os, adam->v[i].values.data(),
                adam->v[i].numel() * sizeof(double));
    }
  } else {
    write_pod<std::uint8_t>(os, 0);
  }
  if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");

  char magic[8];
  read_raw(is, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic, not a parameter container");
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));

  Checkpoint ck;
  const auto count = read_pod<std::uint32_t>(is, "item count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, "name length");
    if (name_len > 4096) throw DataError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    read_raw(is, name.data(), name_len, "name");
    const auto trainable = read_pod<std::uint8_t>(is, "trainable flag");
    const auto ndim = read_pod<std::uint32_t>(is, "rank");
    if (ndim > 4) throw DataError("checkpoint: rank exceeds 4 axes");
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(
          static_cast<std::size_t>(read_pod<std::uint64_t>(is, "extent")));
    Grid g(shape);
    read_raw(is, g.values.data(), g.numel() * sizeof(double), "values");
    ck.params.items.push_back({std::move(name), std::move(g), trainable != 0});
  }

  const auto has_adam = read_pod<std::uint8_t>(is, "adam flag");
  if (has_adam) {
    AdamState st;
    st.cfg.lr = read_pod<double>(is, "adam lr");
    st.cfg.beta1 = read_pod<double>(is, "adam beta1");
    st.cfg.beta2 = read_pod<double>(is, "adam beta2");
    st.cfg.eps = read_pod<double>(is, "adam eps");
    st.step_count = read_pod<std::uint64_t>(is, "adam step count");
    for (const auto& item : ck.params.items) {
      if (!item.trainable) continue;
      Grid m(item.value.shape), v(item.value.shape);
      read_raw(is, m.values.data(), m.numel() * sizeof(double), "adam m");
      read_raw(is, v.values.data(), v.numel() * sizeof(double), "adam v");
      st.m.push_back(std::move(m));
      st.v.push_back(std::move(v));
    }
    ck.adam = std::move(st);
  }
  return ck;
}

}  // namespace oescn

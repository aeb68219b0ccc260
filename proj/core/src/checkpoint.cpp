#include "grades_lab/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace grades_lab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'G', 'R', 'L', 'B', 'C', 'K', 'P', 'T'};

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

template <std::floating_point T>
void put_entry(std::ostream& out, const std::string& name, const Matrix<T>& m) {
  if (name.size() > 0xFFFF) throw IoError("checkpoint: entry name too long");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(T)));
}

template <std::floating_point T>
std::pair<std::string, Matrix<T>> get_entry(std::istream& in) {
  const auto len = get<std::uint16_t>(in);
  std::string name(len, '\0');
  in.read(name.data(), len);
  const auto rows = get<std::uint32_t>(in);
  const auto cols = get<std::uint32_t>(in);
  if (rows == 0 || cols == 0) throw IoError("checkpoint: entry '" + name + "' has a zero dimension");
  std::vector<T> data(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!in) throw IoError("checkpoint: truncated entry '" + name + "'");
  return {std::move(name), Matrix<T>(rows, cols, std::move(data))};
}

}  // namespace

template <std::floating_point T>
void write_checkpoint(std::ostream& out, const ModelParams<T>& params) {
  const auto& c = params.config;
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(T));
  for (std::uint64_t v : {std::uint64_t{c.vocab_size}, std::uint64_t{c.d_model},
                          std::uint64_t{c.n_heads}, std::uint64_t{c.n_layers}, std::uint64_t{c.d_ff},
                          std::uint64_t{c.max_seq_len}, c.seed}) {
    put<std::uint64_t>(out, v);
  }
  const bool lora = params.lora_mode();
  const double scale = lora ? params.adapters.front().scale : 0.0;
  for (const auto& ad : params.adapters) {
    if (ad.scale != scale) throw IoError("checkpoint: adapters with differing scales are not supported");
  }
  put<std::uint8_t>(out, lora ? 1 : 0);
  put<double>(out, scale);

  std::uint32_t count = 0;
  params.base.for_each([&](const std::string&, std::optional<ComponentId>, const Matrix<T>&) { ++count; });
  count += static_cast<std::uint32_t>(2 * params.adapters.size());
  put<std::uint32_t>(out, count);
  params.base.for_each([&](const std::string& name, std::optional<ComponentId>, const Matrix<T>& m) {
    put_entry(out, name, m);
  });
  for (const auto& ad : params.adapters) {
    put_entry(out, component_name(ad.component) + ".A", ad.a);
    put_entry(out, component_name(ad.component) + ".B", ad.b);
  }
  if (!out) throw IoError("checkpoint: write failed");
}

template <std::floating_point T>
ModelParams<T> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("checkpoint: bad magic");
  if (const auto v = get<std::uint32_t>(in); v != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(v));
  }
  if (const auto bytes = get<std::uint32_t>(in); bytes != sizeof(T)) {
    throw IoError("checkpoint: stored with " + std::to_string(bytes * 8) +
                  "-bit scalars, requested " + std::to_string(sizeof(T) * 8));
  }
  ModelParams<T> p;
  auto& c = p.config;
  c.vocab_size = get<std::uint64_t>(in);
  c.d_model = get<std::uint64_t>(in);
  c.n_heads = get<std::uint64_t>(in);
  c.n_layers = get<std::uint64_t>(in);
  c.d_ff = get<std::uint64_t>(in);
  c.max_seq_len = get<std::uint64_t>(in);
  c.seed = get<std::uint64_t>(in);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: invalid config block: ") + e.what());
  }
  const bool lora = get<std::uint8_t>(in) != 0;
  const double scale = get<double>(in);
  const auto count = get<std::uint32_t>(in);

  // Shape template in canonical order; entries must match it one for one.
  p.base.layers.resize(c.n_layers);
  std::vector<std::pair<std::string, Matrix<T>*>> expected;
  p.base.for_each([&](const std::string& name, std::optional<ComponentId>, Matrix<T>& m) {
    expected.emplace_back(name, &m);
  });
  if (count < expected.size() || (count - expected.size()) % 2 != 0) {
    throw IoError("checkpoint: unexpected entry count " + std::to_string(count));
  }
  for (auto& [name, slot] : expected) {
    auto [got_name, m] = get_entry<T>(in);
    if (got_name != name) throw IoError("checkpoint: expected entry '" + name + "', found '" + got_name + "'");
    *slot = std::move(m);
  }
  const std::size_t n_adapters = (count - expected.size()) / 2;
  if ((n_adapters > 0) != lora) throw IoError("checkpoint: LoRA flag disagrees with entries");
  for (std::size_t i = 0; i < n_adapters; ++i) {
    auto [a_name, a] = get_entry<T>(in);
    auto [b_name, b] = get_entry<T>(in);
    if (a_name.size() < 2 || !a_name.ends_with(".A") || b_name != a_name.substr(0, a_name.size() - 2) + ".B") {
      throw IoError("checkpoint: malformed adapter entries '" + a_name + "', '" + b_name + "'");
    }
    auto id = parse_component_name(std::string_view(a_name).substr(0, a_name.size() - 2));
    if (!id) throw IoError("checkpoint: bad adapter component '" + a_name + "'");
    p.adapters.push_back({*id, std::move(a), std::move(b), scale});
  }
  return p;
}

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

template <std::floating_point T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  return read_checkpoint<T>(in);
}

template void write_checkpoint<float>(std::ostream&, const ModelParams<float>&);
template void write_checkpoint<double>(std::ostream&, const ModelParams<double>&);
template ModelParams<float> read_checkpoint<float>(std::istream&);
template ModelParams<double> read_checkpoint<double>(std::istream&);
template void save_checkpoint<float>(const std::filesystem::path&, const ModelParams<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelParams<double>&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace grades_lab

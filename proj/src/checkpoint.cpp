#include "dap/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dap {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'A', 'P', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_f64(std::vector<std::uint8_t>& out, double d) { put(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ContractError("checkpoint: truncated container");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ContractError("checkpoint: bad magic");
  }
  Reader r(bytes.subspan(8));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ContractError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.get_f64();
    if (!out.emplace(name, Tensor(shape, std::move(data))).second) {
      throw ContractError("checkpoint: duplicate entry '" + name + "'");
    }
  }
  if (!r.done()) throw ContractError("checkpoint: trailing bytes");
  return out;
}

NamedTensors collect(std::span<const Parameter* const> params) {
  NamedTensors out;
  for (const Parameter* p : params) {
    Tensor copy(p->value.shape(), p->value.storage());
    if (!out.emplace(p->name, std::move(copy)).second) {
      throw ContractError("checkpoint: duplicate parameter name '" + p->name + "'");
    }
  }
  return out;
}

NamedTensors collect(std::span<Parameter* const> params) {
  std::vector<const Parameter*> cp(params.begin(), params.end());
  return collect(std::span<const Parameter* const>(cp));
}

void save_checkpoint(const std::filesystem::path& file, const NamedTensors& tensors,
                     std::string_view config_hash, std::uint64_t seed) {
  const auto bytes = encode_checkpoint(tensors);
  write_bytes(file, bytes);
  std::ostringstream m;
  m << "format_version=" << kCheckpointVersion << '\n'
    << "config_hash=" << config_hash << '\n'
    << "seed=" << seed << '\n'
    << "entries=" << tensors.size() << '\n'
    << "sha256=" << sha256_hex(bytes) << '\n';
  write_text(file.string() + ".manifest", m.str());
}

NamedTensors load_checkpoint(const std::filesystem::path& file) {
  const auto bytes = read_bytes(file);
  const auto manifest = file.string() + ".manifest";
  if (std::filesystem::exists(manifest)) {
    const auto expected = load_manifest(file).sha256;
    if (!expected.empty() && expected != sha256_hex(bytes)) {
      throw ContractError("checkpoint: '" + file.string() + "' does not match its manifest digest");
    }
  }
  return decode_checkpoint(bytes);
}

CheckpointManifest load_manifest(const std::filesystem::path& checkpoint_file) {
  std::istringstream in(read_text(checkpoint_file.string() + ".manifest"));
  CheckpointManifest m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq);
    const auto val = line.substr(eq + 1);
    if (key == "format_version") m.format_version = static_cast<std::uint32_t>(std::stoul(val));
    else if (key == "config_hash") m.config_hash = val;
    else if (key == "seed") m.seed = std::stoull(val);
    else if (key == "entries") m.entries = std::stoull(val);
    else if (key == "sha256") m.sha256 = val;
  }
  return m;
}

void restore(const NamedTensors& stored, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw ContractError("checkpoint: missing parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) {
      throw ShapeError("checkpoint: '" + p->name + "' stored as " + shape_string(it->second.shape()) +
                       ", model expects " + shape_string(p->value.shape()));
    }
    std::copy(it->second.data().begin(), it->second.data().end(), p->value.data().begin());
    p->value.clear_grad();
  }
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string parameter_digest(std::span<Parameter* const> params, std::string_view prefix) {
  std::vector<Parameter*> chosen;
  for (Parameter* p : params) {
    if (p->name.starts_with(prefix)) chosen.push_back(p);
  }
  return sha256_hex(encode_checkpoint(collect(std::span<Parameter* const>(chosen))));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ContractError("cannot open '" + file.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& file, std::span<const std::uint8_t> bytes) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ContractError("cannot open '" + file.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ContractError("cannot open '" + file.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_text(const std::filesystem::path& file, std::string_view text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ContractError("cannot open '" + file.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace dap

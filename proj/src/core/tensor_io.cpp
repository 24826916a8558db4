#include "neuroclips/core/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/hash.hpp"

namespace neuroclips {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'N', 'C', 'T', 'E', 'N', 'S', 'R', '1'};
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

void save_tensor(const TensorContainer& container, const fs::path& path) {
  const Tensor& t = container.tensor;
  nlohmann::json header = {{"dtype", container.dtype == DType::F32 ? "f32" : "f64"},
                           {"shape", t.shape()},
                           {"order", "C"}};
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (container.dtype == DType::F64) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
  } else {
    std::vector<float> buf(t.vec().begin(), t.vec().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TensorContainer load_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw CorruptFile(path.string() + ": bad magic");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 20)) {
    throw CorruptFile(path.string() + ": bad header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CorruptFile(path.string() + ": truncated header");
  TensorContainer c;
  Shape shape;
  try {
    const auto header = nlohmann::json::parse(text);
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype == "f32") c.dtype = DType::F32;
    else if (dtype == "f64") c.dtype = DType::F64;
    else throw CorruptFile(path.string() + ": unknown dtype " + dtype);
    if (header.value("order", "C") != "C") throw CorruptFile(path.string() + ": only C order is supported");
    shape = header.at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(path.string() + ": bad header: " + e.what());
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t bytes = n * dtype_size(c.dtype);
  std::vector<char> payload(bytes);
  if (!in.read(payload.data(), static_cast<std::streamsize>(bytes))) {
    throw CorruptFile(path.string() + ": payload shorter than shape " + shape_str(shape) + " requires");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptFile(path.string() + ": trailing bytes after payload");
  std::vector<double> data(n);
  if (c.dtype == DType::F64) {
    std::memcpy(data.data(), payload.data(), bytes);
  } else {
    std::vector<float> f(n);
    std::memcpy(f.data(), payload.data(), bytes);
    std::copy(f.begin(), f.end(), data.begin());
  }
  c.tensor = Tensor(std::move(shape), std::move(data));
  return c;
}

void save_tensor(const Tensor& t, const fs::path& path, DType dtype) { save_tensor(TensorContainer{dtype, t}, path); }

Tensor load_tensor_values(const fs::path& path) { return load_tensor(path).tensor; }

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw CorruptFile("checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::string Checkpoint::content_hash() const {
  Sha256 h;
  for (const auto& [name, t] : tensors) {
    h.update(name);
    h.update(t);
  }
  return h.hex();
}

void save_checkpoint(const fs::path& dir, Checkpoint ckpt) {
  fs::create_directories(dir);
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    save_tensor(t, dir / (name + ".tns"));
    names.push_back(name);
  }
  ckpt.manifest["tensors"] = names;
  ckpt.manifest["content_hash"] = ckpt.content_hash();
  write_json(dir / "manifest.json", ckpt.manifest);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw NotReady("no checkpoint at " + dir.string());
  Checkpoint ckpt;
  ckpt.manifest = read_json(dir / "manifest.json");
  for (const auto& name : ckpt.manifest.at("tensors")) {
    const std::string n = name.get<std::string>();
    ckpt.tensors.emplace(n, load_tensor_values(dir / (n + ".tns")));
  }
  if (ckpt.manifest.contains("content_hash") && ckpt.manifest["content_hash"] != ckpt.content_hash()) {
    throw CorruptFile(dir.string() + ": content hash mismatch");
  }
  return ckpt;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(path.string() + ": " + e.what());
  }
}

}  // namespace neuroclips

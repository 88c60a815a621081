#include "leda/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace leda {

namespace {

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kInt32: return "i32";
    default: throw Error("unsupported checkpoint dtype: " + std::string(torch::toString(t)));
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "i32") return torch::kInt32;
  throw FormatError("unknown checkpoint dtype '" + s + "'");
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& manifest_path, const Checkpoint& ckpt) {
  std::filesystem::path bin = manifest_path;
  bin += ".bin";

  std::ofstream payload(bin, std::ios::binary);
  if (!payload) throw Error("cannot write " + bin.string());

  std::ostringstream manifest;
  manifest << "LEDACKPT1\n";
  manifest << "step = " << ckpt.step << "\n";
  manifest << "payload = " << bin.filename().string() << "\n";
  for (const auto& [k, v] : ckpt.config_echo) manifest << "config " << k << " = " << v << "\n";

  std::int64_t offset = 0;
  for (const auto& [name, tensor] : ckpt.tensors) {
    torch::Tensor t = tensor.detach().cpu().contiguous();
    const std::int64_t nbytes = t.numel() * static_cast<std::int64_t>(t.element_size());
    manifest << "tensor " << name << " " << dtype_name(t.scalar_type()) << " " << offset << " "
             << nbytes << " " << t.dim();
    for (std::int64_t d : t.sizes()) manifest << " " << d;
    manifest << "\n";
    payload.write(static_cast<const char*>(t.const_data_ptr()), nbytes);
    offset += nbytes;
  }
  payload.close();

  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot write " + manifest_path.string());
  out << manifest.str();
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw PrerequisiteError("cannot open checkpoint " + manifest_path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "LEDACKPT1")
    throw FormatError(manifest_path.string() + ": bad checkpoint magic");

  Checkpoint ckpt;
  std::filesystem::path bin;
  struct Rec {
    std::string name;
    torch::ScalarType dtype;
    std::int64_t offset, nbytes;
    std::vector<std::int64_t> shape;
  };
  std::vector<Rec> recs;

  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.rfind("tensor ", 0) == 0) {
      std::istringstream ss(t.substr(7));
      Rec r;
      std::string dtype;
      std::int64_t rank = 0;
      ss >> r.name >> dtype >> r.offset >> r.nbytes >> rank;
      if (!ss || rank < 0) throw FormatError(manifest_path.string() + ": bad tensor record");
      r.dtype = dtype_from(dtype);
      r.shape.resize(rank);
      for (auto& d : r.shape) ss >> d;
      if (!ss && rank > 0) throw FormatError(manifest_path.string() + ": bad tensor shape");
      recs.push_back(std::move(r));
    } else if (t.rfind("config ", 0) == 0) {
      std::string rest = t.substr(7);
      std::size_t eq = rest.find(" = ");
      if (eq == std::string::npos)
        throw FormatError(manifest_path.string() + ": bad config echo line");
      ckpt.config_echo[trim(rest.substr(0, eq))] = rest.substr(eq + 3);
    } else if (t.rfind("step", 0) == 0) {
      std::size_t eq = t.find('=');
      if (eq == std::string::npos || !parse_int64(t.substr(eq + 1), ckpt.step))
        throw FormatError(manifest_path.string() + ": bad step line");
    } else if (t.rfind("payload", 0) == 0) {
      std::size_t eq = t.find('=');
      if (eq == std::string::npos) throw FormatError(manifest_path.string() + ": bad payload line");
      bin = manifest_path.parent_path() / trim(t.substr(eq + 1));
    } else {
      throw FormatError(manifest_path.string() + ": unrecognized manifest line: " + t);
    }
  }
  if (bin.empty()) throw FormatError(manifest_path.string() + ": missing payload line");

  std::ifstream payload(bin, std::ios::binary);
  if (!payload) throw PrerequisiteError("cannot open payload " + bin.string());
  for (const auto& r : recs) {
    torch::Tensor t = torch::empty(r.shape, torch::TensorOptions().dtype(r.dtype));
    const std::int64_t expect = t.numel() * static_cast<std::int64_t>(t.element_size());
    if (expect != r.nbytes)
      throw FormatError(bin.string() + ": tensor '" + r.name + "' byte count mismatch");
    payload.seekg(r.offset);
    payload.read(static_cast<char*>(t.data_ptr()), r.nbytes);
    if (payload.gcount() != r.nbytes)
      throw FormatError(bin.string() + ": truncated tensor '" + r.name + "'");
    ckpt.tensors.emplace_back(r.name, std::move(t));
  }
  return ckpt;
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : m.named_parameters(/*recurse=*/true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : m.named_buffers(/*recurse=*/true)) out.emplace_back(b.key(), b.value());
  return out;
}

void load_named_state(torch::nn::Module& m, const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (auto& [name, tensor] : named_state(m)) {
    const torch::Tensor* src = ckpt.find(prefix.empty() ? name : prefix + "." + name);
    if (src == nullptr)
      throw PrerequisiteError("checkpoint is missing tensor '" + prefix + "." + name + "'");
    if (src->sizes() != tensor.sizes())
      throw PrerequisiteError("checkpoint tensor '" + name + "' shape mismatch");
    tensor.copy_(src->to(tensor.scalar_type()));
  }
}

std::uint64_t tensor_hash(const torch::Tensor& t) {
  torch::Tensor c = t.detach().cpu().contiguous();
  return fnv1a64(c.const_data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size());
}

std::uint64_t state_hash(const torch::nn::Module& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named_state(m)) {
    h = fnv1a64(name.data(), name.size(), h);
    const std::uint64_t th = tensor_hash(t);
    h = fnv1a64(&th, sizeof(th), h);
  }
  return h;
}

}  // namespace leda

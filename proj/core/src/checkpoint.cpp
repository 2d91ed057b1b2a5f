#include "vgs/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "vgs/error.hpp"

namespace vgs {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64_payload(std::ostream& out, const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    const double d = t[i];
    std::memcpy(&bits, &d, 8);
    write_u64(out, bits);
  }
}

struct Reader {
  std::ifstream in;
  std::string path;

  void need(char* dst, std::size_t n, const char* what) {
    if (!in.read(dst, static_cast<std::streamsize>(n)))
      throw FormatError(path + ": truncated while reading " + what);
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    need(reinterpret_cast<char*>(b), 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    need(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  void f64_payload(Tensor& t, const char* what) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = u64(what);
      double d;
      std::memcpy(&d, &bits, 8);
      t[i] = d;
    }
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainState* state) {
  const ParamCollection& params = model.params();
  if (state && (state->m.size() != params.size() || state->v.size() != params.size()))
    throw DimensionError("save_checkpoint: training state does not match parameter table");

  std::filesystem::path dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");

  out.write("VGSC", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d = 0; d < p.value.rank(); ++d) write_u64(out, p.value.dim(d));
    write_f64_payload(out, p.value);
  }

  const std::string cfg = model.config().to_json();
  write_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  if (state) {
    out.write("VGSA", 4);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!state->m[i].same_shape(params[i].value) || !state->v[i].same_shape(params[i].value))
        throw DimensionError("save_checkpoint: moment shape mismatch at '" + params[i].name +
                             "'");
      write_f64_payload(out, state->m[i]);
      write_f64_payload(out, state->v[i]);
    }
    write_u64(out, state->step);
    write_u64(out, state->epochs_done);
  }

  out.close();
  if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
}

namespace {

Model load_impl(const std::string& path, TrainState* state) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  if (!r.in) throw FormatError("cannot open checkpoint '" + path + "'");

  char magic[4];
  r.need(magic, 4, "magic");
  if (std::memcmp(magic, "VGSC", 4) != 0)
    throw FormatError(path + ": bad magic, not a VGSC checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != 1)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t count = r.u32("parameter count");
  std::vector<std::pair<std::string, Tensor>> table;
  table.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name(name_len, '\0');
    r.need(name.data(), name_len, "parameter name");
    const std::uint32_t rank = r.u32("rank");
    std::vector<std::size_t> dims(rank);
    for (std::uint32_t d = 0; d < rank; ++d)
      dims[d] = static_cast<std::size_t>(r.u64("dimension"));
    Tensor t(dims);
    r.f64_payload(t, "parameter payload");
    table.emplace_back(std::move(name), std::move(t));
  }

  const std::uint32_t cfg_len = r.u32("config length");
  std::string cfg_text(cfg_len, '\0');
  r.need(cfg_text.data(), cfg_len, "config blob");
  ModelConfig cfg = ModelConfig::from_json(cfg_text);

  Model model(cfg);
  ParamCollection& params = model.params();
  if (params.size() != table.size())
    throw FormatError(path + ": parameter table has " + std::to_string(table.size()) +
                      " entries but the config implies " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != table[i].first)
      throw FormatError(path + ": parameter " + std::to_string(i) + " is '" + table[i].first +
                        "' but the config implies '" + params[i].name + "'");
    if (!params[i].value.same_shape(table[i].second))
      throw FormatError(path + ": parameter '" + params[i].name + "' has shape " +
                        shape_str(table[i].second) + " but the config implies " +
                        shape_str(params[i].value));
    params[i].value = std::move(table[i].second);
  }

  char extra[4];
  if (r.in.read(extra, 4)) {
    if (std::memcmp(extra, "VGSA", 4) != 0)
      throw FormatError(path + ": unexpected trailing bytes after config blob");
    TrainState local;
    local.m.reserve(params.size());
    local.v.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor m(params[i].value.shape());
      Tensor v(params[i].value.shape());
      r.f64_payload(m, "first moment");
      r.f64_payload(v, "second moment");
      local.m.push_back(std::move(m));
      local.v.push_back(std::move(v));
    }
    local.step = r.u64("step counter");
    local.epochs_done = r.u64("epoch counter");
    char tail;
    if (r.in.read(&tail, 1)) throw FormatError(path + ": trailing bytes after training state");
    if (state) *state = std::move(local);
  } else if (state) {
    throw FormatError(path + ": checkpoint carries no training state, cannot resume");
  }
  return model;
}

}  // namespace

Model load_checkpoint(const std::string& path) { return load_impl(path, nullptr); }

Model load_checkpoint(const std::string& path, TrainState& state) {
  return load_impl(path, &state);
}

}  // namespace vgs

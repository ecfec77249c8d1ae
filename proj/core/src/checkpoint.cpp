#include "cdnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace cdnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

void put_u32(std::ostream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& f, const std::string& path) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (f.gcount() != 4) throw DataError(path + ": truncated checkpoint");
  return v;
}

void put_tensor(std::ostream& f, const std::string& name, const Tensor& t) {
  put_u32(f, static_cast<uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(f, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) put_u32(f, static_cast<uint32_t>(d));
  for (double v : t.data()) {
    const float fv = static_cast<float>(v);
    f.write(reinterpret_cast<const char*>(&fv), 4);
  }
}

struct Record {
  Shape shape;
  std::vector<double> values;
};

Record get_record(std::istream& f, const std::string& path, std::string* name) {
  const uint32_t name_len = get_u32(f, path);
  name->resize(name_len);
  f.read(name->data(), name_len);
  if (f.gcount() != static_cast<std::streamsize>(name_len))
    throw DataError(path + ": truncated tensor name");
  Record r;
  const uint32_t rank = get_u32(f, path);
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = get_u32(f, path);
    if (d == 0) throw DataError(path + ": zero dimension in '" + *name + "'");
    r.shape.push_back(d);
    numel *= d;
  }
  r.values.resize(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i) {
    float fv = 0.0f;
    f.read(reinterpret_cast<char*>(&fv), 4);
    if (f.gcount() != 4)
      throw DataError(path + ": truncated values for '" + *name + "'");
    r.values[static_cast<size_t>(i)] = static_cast<double>(fv);
  }
  return r;
}

Tensor scalar32(double v) { return Tensor({1}, {snap32(v)}); }

// The train-config scalars serialized alongside the weights, in order.
std::vector<std::pair<std::string, Tensor>> config_tensors(
    const TrainConfig& cfg, int64_t step) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("cfg.lr0", scalar32(cfg.lr0));
  out.emplace_back("cfg.momentum", scalar32(cfg.momentum));
  out.emplace_back("cfg.weight_decay", scalar32(cfg.weight_decay));
  out.emplace_back("cfg.batch", scalar32(cfg.batch));
  out.emplace_back("cfg.epochs", scalar32(cfg.epochs));
  out.emplace_back("cfg.lr_step", scalar32(cfg.lr_step));
  out.emplace_back("cfg.lr_factor", scalar32(cfg.lr_factor));
  out.emplace_back("cfg.head_lr_mult", scalar32(cfg.head_lr_mult));
  out.emplace_back("cfg.lr_mode",
                   scalar32(cfg.lr_mode == LrMode::kInitial ? 1.0 : 0.0));
  for (int i = 0; i < 4; ++i)
    out.emplace_back("cfg.seed." + std::to_string(i),
                     scalar32(static_cast<double>((cfg.seed >> (16 * i)) &
                                                  0xFFFFULL)));
  out.emplace_back("cfg.step", scalar32(static_cast<double>(step)));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, ParamRegistry& reg,
                     const TrainConfig& cfg, int64_t step) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  const auto params = reg.params();
  const auto buffers = reg.buffer_names();
  const auto cfg_tensors = config_tensors(cfg, step);
  f.write("TYNC", 4);
  put_u32(f, kCheckpointVersion);
  put_u32(f, static_cast<uint32_t>(2 * params.size() + buffers.size() +
                                   cfg_tensors.size()));
  for (const Param* p : params) put_tensor(f, p->name, p->value);
  for (const Param* p : params) put_tensor(f, "opt.m." + p->name, p->momentum);
  for (const auto& name : buffers) put_tensor(f, name, reg.buffer_at(name));
  for (const auto& [name, t] : cfg_tensors) put_tensor(f, name, t);
  if (!f) throw DataError("short write to '" + path + "'");
}

LoadedTrainState load_checkpoint(const std::string& path, ParamRegistry& reg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  char magic[4] = {};
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "TYNC", 4) != 0)
    throw DataError(path + ": bad checkpoint magic");
  const uint32_t version = get_u32(f, path);
  if (version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  const uint32_t count = get_u32(f, path);
  std::map<std::string, Record> records;
  std::vector<std::string> file_order;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name;
    Record r = get_record(f, path, &name);
    if (!records.emplace(name, std::move(r)).second)
      throw DataError(path + ": duplicate tensor '" + name + "'");
    file_order.push_back(std::move(name));
  }

  std::map<std::string, bool> consumed;
  for (const auto& n : file_order) consumed[n] = false;
  auto take = [&](const std::string& name, const Shape* want) -> const Record& {
    auto it = records.find(name);
    if (it == records.end())
      throw DataError(path + ": missing tensor '" + name + "'");
    if (want && it->second.shape != *want)
      throw DataError(path + ": tensor '" + name + "' has shape " +
                      shape_str(it->second.shape) + ", expected " +
                      shape_str(*want));
    consumed[name] = true;
    return it->second;
  };

  for (Param* p : reg.params()) {
    p->value.data() = take(p->name, &p->value.shape()).values;
    p->momentum.data() = take("opt.m." + p->name, &p->momentum.shape()).values;
    p->value.zero_grad();
  }
  for (const auto& name : reg.buffer_names()) {
    Tensor b = reg.buffer_at(name);
    b.data() = take(name, &b.shape()).values;
  }

  LoadedTrainState state;
  const Shape one{1};
  state.cfg.lr0 = take("cfg.lr0", &one).values[0];
  state.cfg.momentum = take("cfg.momentum", &one).values[0];
  state.cfg.weight_decay = take("cfg.weight_decay", &one).values[0];
  state.cfg.batch = static_cast<int>(take("cfg.batch", &one).values[0]);
  state.cfg.epochs = static_cast<int>(take("cfg.epochs", &one).values[0]);
  state.cfg.lr_step = static_cast<int>(take("cfg.lr_step", &one).values[0]);
  state.cfg.lr_factor = take("cfg.lr_factor", &one).values[0];
  state.cfg.head_lr_mult = take("cfg.head_lr_mult", &one).values[0];
  state.cfg.lr_mode = take("cfg.lr_mode", &one).values[0] == 1.0
                          ? LrMode::kInitial
                          : LrMode::kCompound;
  uint64_t seed = 0;
  for (int i = 0; i < 4; ++i)
    seed |= static_cast<uint64_t>(
                take("cfg.seed." + std::to_string(i), &one).values[0])
            << (16 * i);
  state.cfg.seed = seed;
  state.step = static_cast<int64_t>(take("cfg.step", &one).values[0]);

  for (const auto& name : file_order)
    if (!consumed[name])
      throw DataError(path + ": unexpected tensor '" + name + "'");
  return state;
}

}  // namespace cdnet

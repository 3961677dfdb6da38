#include "eit3d/checkpoint.hpp"

#include <cstring>

#include "eit3d/binio.hpp"

namespace eit3d {

namespace {

constexpr char kMagic[8] = {'T', 'N', 'N', 'E', 'T', 'C', 'K', 'P'};

nlohmann::json tensor_list(const std::vector<Parameter<float>>& ps) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : ps) out.push_back({{"name", p.name}, {"shape", p.value.shape}});
  return out;
}

void check_tensor_list(const nlohmann::json& listed, const std::vector<Parameter<float>>& ps,
                       const std::string& what) {
  if (!listed.is_array() || listed.size() != ps.size()) {
    fail(ErrorKind::Format, "checkpoint lists " + std::to_string(listed.size()) + " " + what +
                                " tensors, architecture has " + std::to_string(ps.size()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto name = listed[i].at("name").get<std::string>();
    const auto shape = listed[i].at("shape").get<std::vector<int>>();
    if (name != ps[i].name || shape != ps[i].value.shape) {
      fail(ErrorKind::Format, "checkpoint tensor " + std::to_string(i) + " is " + name + " " +
                                  shape_string(shape) + ", architecture expects " + ps[i].name + " " +
                                  shape_string(ps[i].value.shape));
    }
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& model) {
  nlohmann::json history = nlohmann::json::array();
  for (const EpochLoss& e : model.history) history.push_back({e.epoch, e.train, e.validation});
  const nlohmann::json meta{{"architecture", model.network.arch()},
                            {"parameters", tensor_list(model.network.parameters())},
                            {"buffers", tensor_list(model.network.buffers())},
                            {"training",
                             {{"config", model.config},
                              {"best_epoch", model.best_epoch},
                              {"history", history}}}};
  const std::string text = meta.dump();
  binio::Writer w;
  w.bytes(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  for (const auto& p : model.network.parameters()) w.f32s(p.value.data);
  for (const auto& p : model.network.buffers()) w.f32s(p.value.data);
  w.u32(binio::crc32(w.buffer()));
  return w.buffer();
}

TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "checkpoint");
  const auto magic = r.take(8);
  if (std::memcmp(magic.data(), kMagic, 8) != 0) fail(ErrorKind::Format, "not a TN-Net checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Format, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t len = r.u64();
  if (len > r.remaining()) fail(ErrorKind::Format, "checkpoint is truncated inside its descriptor");
  const auto text = r.take(static_cast<std::size_t>(len));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint descriptor is not valid JSON: ") + e.what());
  }

  Architecture arch;
  TrainedModel model{Network<float>(Architecture{}), {}, 0, {}};
  try {
    arch = meta.at("architecture").get<Architecture>();
    arch.validate();
    model.network = Network<float>(arch);
    check_tensor_list(meta.at("parameters"), model.network.parameters(), "parameter");
    check_tensor_list(meta.at("buffers"), model.network.buffers(), "buffer");
    const auto& tr = meta.at("training");
    model.config = tr.at("config").get<TrainConfig>();
    model.best_epoch = tr.at("best_epoch").get<int>();
    for (const auto& row : tr.at("history")) {
      model.history.push_back({row.at(0).get<int>(), row.at(1).get<double>(), row.at(2).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed checkpoint descriptor: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("checkpoint descriptor rejected: ") + e.what());
  }

  for (auto& p : model.network.parameters()) r.f32s(p.value.data);
  for (auto& p : model.network.buffers()) r.f32s(p.value.data);
  const std::size_t body = r.position();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) {
    fail(ErrorKind::Format, "checkpoint has " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  if (binio::crc32(bytes.first(body)) != stored) fail(ErrorKind::Format, "checkpoint checksum mismatch");
  return model;
}

void save_checkpoint(const TrainedModel& model, const std::string& path) {
  binio::write_file(path, encode_checkpoint(model));
}

TrainedModel load_checkpoint(const std::string& path) {
  const auto bytes = binio::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

}  // namespace eit3d

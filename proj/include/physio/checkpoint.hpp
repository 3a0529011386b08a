#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "physio/dataset.hpp"
#include "physio/nets.hpp"
#include "physio/util.hpp"

namespace physio {

/// Dataset identity carried inside checkpoints: enough to generate, export
/// and denormalize without reopening the training data.
struct DatasetMeta {
  std::string name;
  std::vector<std::string> classes;
  std::vector<int> class_counts;  // train-split samples per class
  int seq_len = 0;
  int channels = 0;
  double sample_rate = 0.0;
  NormStats norm;
  std::string fingerprint;
};

inline DatasetMeta dataset_meta(const DatasetBundle& b) {
  DatasetMeta m;
  m.name = b.name;
  m.classes = b.classes;
  m.class_counts.assign(b.classes.size(), 0);
  for (const auto& s : b.train) m.class_counts[s.label - 1] += 1;
  m.seq_len = b.seq_len();
  m.channels = b.channels();
  m.sample_rate = b.sample_rate;
  m.norm = b.norm;
  m.fingerprint = dataset_fingerprint(b);
  return m;
}

/// Trained parameters plus everything needed to use them. Which networks are
/// populated depends on the model kind.
struct Checkpoint {
  ModelKind kind = ModelKind::physiogan;
  NetConfig net;
  DatasetMeta data;
  EncoderParams enc;
  DecoderParams dec;
  DiscriminatorParams disc;
  OracleParams oracle;

  bool has_encoder() const { return kind == ModelKind::physiogan || kind == ModelKind::cvrae; }
  bool has_decoder() const { return kind != ModelKind::oracle; }
  bool has_discriminator() const {
    return kind == ModelKind::physiogan || kind == ModelKind::rcgan ||
           kind == ModelKind::rcgan_ar;
  }
  bool has_oracle() const { return kind == ModelKind::oracle; }
};

namespace detail {

inline void to_json_net(nlohmann::json& j, const NetConfig& c) {
  j = {{"nz", c.latent_dim},         {"enc_hidden", c.enc_hidden},
       {"dec_hidden", c.dec_hidden}, {"oracle_hidden", c.oracle_hidden},
       {"conv_filters", c.conv_filters}, {"conv_size", c.conv_size},
       {"conv_stride", c.conv_stride},   {"L", c.num_classes},
       {"Nd", c.channels},               {"T", c.seq_len}};
}

inline NetConfig net_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.latent_dim = j.at("nz").get<int>();
  c.enc_hidden = j.at("enc_hidden").get<int>();
  c.dec_hidden = j.at("dec_hidden").get<int>();
  c.oracle_hidden = j.at("oracle_hidden").get<int>();
  c.conv_filters = j.at("conv_filters").get<int>();
  c.conv_size = j.at("conv_size").get<int>();
  c.conv_stride = j.at("conv_stride").get<int>();
  c.num_classes = j.at("L").get<int>();
  c.channels = j.at("Nd").get<int>();
  c.seq_len = j.at("T").get<int>();
  return c;
}

template <class Fn>
void for_each_checkpoint_tensor(Checkpoint& c, Fn&& fn) {
  if (c.has_encoder())
    visit_params(c.enc, [&](const std::string& n, MatrixXd& m) { fn("enc." + n, m); });
  if (c.has_decoder())
    visit_params(c.dec, [&](const std::string& n, MatrixXd& m) { fn("dec." + n, m); });
  if (c.has_discriminator())
    visit_params(c.disc, [&](const std::string& n, MatrixXd& m) { fn("disc." + n, m); });
  if (c.has_oracle())
    visit_params(c.oracle, [&](const std::string& n, MatrixXd& m) { fn("oracle." + n, m); });
}

constexpr char kCheckpointMagic[8] = {'P', 'H', 'Y', 'S', 'G', 'A', 'N', '1'};

}  // namespace detail

/// Instantiate zero parameter tensors of the shapes the config dictates.
inline void allocate_networks(Checkpoint& c) {
  if (c.has_encoder()) c.enc = make_encoder(c.net);
  if (c.has_decoder()) c.dec = make_decoder(c.net, c.kind);
  if (c.has_discriminator()) c.disc = make_discriminator(c.net);
  if (c.has_oracle()) c.oracle = make_oracle(c.net);
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["kind"] = to_string(ckpt.kind);
  detail::to_json_net(header["net"], ckpt.net);
  header["dataset"] = {
      {"name", ckpt.data.name},
      {"classes", ckpt.data.classes},
      {"class_counts", ckpt.data.class_counts},
      {"T", ckpt.data.seq_len},
      {"Nd", ckpt.data.channels},
      {"sample_rate", ckpt.data.sample_rate},
      {"norm",
       {{"mean", std::vector<double>(ckpt.data.norm.mean.data(),
                                     ckpt.data.norm.mean.data() + ckpt.data.norm.mean.size())},
        {"std", std::vector<double>(ckpt.data.norm.std.data(),
                                    ckpt.data.norm.std.data() + ckpt.data.norm.std.size())}}},
      {"fingerprint", ckpt.data.fingerprint}};
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  detail::for_each_checkpoint_tensor(
      const_cast<Checkpoint&>(ckpt), [&](const std::string& name, MatrixXd& m) {
        tensors.push_back({{"name", name},
                           {"rows", static_cast<std::int64_t>(m.rows())},
                           {"cols", static_cast<std::int64_t>(m.cols())}});
        const auto bytes = static_cast<std::size_t>(m.size()) * sizeof(double);
        const std::size_t off = payload.size();
        payload.resize(off + bytes);
        if (bytes > 0) std::memcpy(payload.data() + off, m.data(), bytes);
      });
  header["tensors"] = std::move(tensors);

  const std::string head = header.dump();
  std::string blob;
  blob.reserve(sizeof(detail::kCheckpointMagic) + 4 + head.size() + payload.size());
  blob.append(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  const std::uint32_t hlen = static_cast<std::uint32_t>(head.size());
  blob.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  blob += head;
  blob += payload;
  atomic_write_file(path, blob);
}

/// Load a checkpoint. If `expected` is given, its NetConfig must equal the
/// stored one exactly.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const NetConfig* expected = nullptr) {
  const std::string blob = read_text_file(path);
  if (blob.size() < sizeof(detail::kCheckpointMagic) + 4 ||
      std::memcmp(blob.data(), detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  std::uint32_t hlen = 0;
  std::memcpy(&hlen, blob.data() + sizeof(detail::kCheckpointMagic), sizeof(hlen));
  const std::size_t head_off = sizeof(detail::kCheckpointMagic) + 4;
  if (head_off + hlen > blob.size())
    throw std::runtime_error("corrupt checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(head_off, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt checkpoint header: " + std::string(e.what()));
  }

  Checkpoint c;
  try {
    c.kind = model_kind_from_string(header.at("kind").get<std::string>());
    c.net = detail::net_from_json(header.at("net"));
    const auto& d = header.at("dataset");
    c.data.name = d.at("name").get<std::string>();
    c.data.classes = d.at("classes").get<std::vector<std::string>>();
    c.data.class_counts = d.at("class_counts").get<std::vector<int>>();
    c.data.seq_len = d.at("T").get<int>();
    c.data.channels = d.at("Nd").get<int>();
    c.data.sample_rate = d.at("sample_rate").get<double>();
    const auto mean = d.at("norm").at("mean").get<std::vector<double>>();
    const auto stdv = d.at("norm").at("std").get<std::vector<double>>();
    c.data.norm.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
    c.data.norm.std = Eigen::Map<const Eigen::VectorXd>(stdv.data(), stdv.size());
    c.data.fingerprint = d.at("fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (expected && !(c.net == *expected))
    throw std::runtime_error("checkpoint NetConfig does not match the expected configuration");

  allocate_networks(c);
  std::size_t off = head_off + hlen;
  std::size_t tensor_idx = 0;
  const auto& tensor_list = header.at("tensors");
  detail::for_each_checkpoint_tensor(c, [&](const std::string& name, MatrixXd& m) {
    if (tensor_idx >= tensor_list.size())
      throw std::runtime_error("checkpoint is missing tensor " + name);
    const auto& t = tensor_list[tensor_idx++];
    if (t.at("name").get<std::string>() != name ||
        t.at("rows").get<std::int64_t>() != m.rows() ||
        t.at("cols").get<std::int64_t>() != m.cols())
      throw std::runtime_error("checkpoint tensor " + name +
                               " does not match the stored configuration");
    const auto bytes = static_cast<std::size_t>(m.size()) * sizeof(double);
    if (off + bytes > blob.size()) throw std::runtime_error("truncated checkpoint payload");
    if (bytes > 0) std::memcpy(m.data(), blob.data() + off, bytes);
    off += bytes;
  });
  if (tensor_idx != tensor_list.size() || off != blob.size())
    throw std::runtime_error("checkpoint payload size mismatch");
  return c;
}

inline std::string checkpoint_fingerprint(const std::filesystem::path& path) {
  return hex64(fnv1a(read_text_file(path)));
}

}  // namespace physio

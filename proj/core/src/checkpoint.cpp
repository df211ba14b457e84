#include "ghnsearch/checkpoint.hpp"

#include "ghnsearch/io.hpp"
#include "json.hpp"

namespace ghn {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = doubles_to_base64(std::vector<double>(t.data(), t.data() + t.numel()));
  return j;
}

void load_tensor_into(const json& j, Tensor& t, const std::string& name) {
  const Shape shape = j.at("shape").get<Shape>();
  if (shape != t.shape()) {
    throw ParseError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                     ", expected " + shape_str(t.shape()));
  }
  const std::vector<double> values = base64_to_doubles(j.at("data").get<std::string>());
  if (static_cast<int64_t>(values.size()) != t.numel()) {
    throw ParseError("checkpoint tensor '" + name + "' payload size mismatch");
  }
  std::copy(values.begin(), values.end(), t.data());
}

std::string mode_name(GraphMode m) {
  return m == GraphMode::kAnytime ? "anytime" : "standard";
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (ckpt.models.empty()) throw ConfigError("save_checkpoint: no models");
  const GhnConfig& c = ckpt.models[0].config;
  json j;
  j["schema"] = "ghn-ckpt/1";
  json cfg;
  cfg["mode"] = mode_name(c.mode);
  cfg["hidden"] = c.hidden;
  cfg["msg_hidden"] = c.msg_hidden;
  cfg["hyper_hidden"] = c.hyper_hidden;
  cfg["channel_tile"] = c.channel_tile;
  cfg["max_kernel"] = c.max_kernel;
  cfg["handoff_every_step"] = c.handoff_every_step;
  cfg["hyper_out_scale"] = c.hyper_out_scale;
  cfg["n_models"] = ckpt.models.size();
  cfg["step"] = ckpt.step;
  cfg["opt_step"] = ckpt.opt.step;
  if (!ckpt.config_echo.empty()) cfg["run"] = json::parse(ckpt.config_echo);
  j["config"] = cfg;

  json tensors;
  for (size_t i = 0; i < ckpt.models.size(); ++i) {
    const std::string prefix = "model" + std::to_string(i) + ".";
    for (const auto& [name, t] : ckpt.models[i].params().entries()) {
      tensors[prefix + name] = tensor_to_json(t);
    }
  }
  for (const auto& [name, mom] : ckpt.opt.slots) {
    json jm;
    jm["shape"] = Shape{static_cast<int64_t>(mom.m.size())};
    jm["data"] = doubles_to_base64(mom.m);
    tensors["opt.m." + name] = jm;
    json jv;
    jv["shape"] = Shape{static_cast<int64_t>(mom.v.size())};
    jv["data"] = doubles_to_base64(mom.v);
    tensors["opt.v." + name] = jv;
  }
  j["tensors"] = tensors;
  write_text_file(path, j.dump());
}

Checkpoint load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  try {
    if (!j.contains("schema") || j.at("schema").get<std::string>() != "ghn-ckpt/1") {
      throw ParseError("checkpoint schema mismatch: expected \"ghn-ckpt/1\"");
    }
    const json& cfg = j.at("config");
    GhnConfig c;
    c.mode = cfg.at("mode").get<std::string>() == "anytime" ? GraphMode::kAnytime
                                                            : GraphMode::kStandard;
    c.hidden = cfg.at("hidden").get<int>();
    c.msg_hidden = cfg.at("msg_hidden").get<int>();
    c.hyper_hidden = cfg.at("hyper_hidden").get<int>();
    c.channel_tile = cfg.at("channel_tile").get<int>();
    c.max_kernel = cfg.at("max_kernel").get<int>();
    c.handoff_every_step = cfg.at("handoff_every_step").get<bool>();
    c.hyper_out_scale = cfg.at("hyper_out_scale").get<double>();

    Checkpoint ckpt;
    ckpt.step = cfg.at("step").get<int64_t>();
    ckpt.opt.step = cfg.at("opt_step").get<int64_t>();
    if (cfg.contains("run")) ckpt.config_echo = cfg.at("run").dump();

    const size_t n_models = cfg.at("n_models").get<size_t>();
    const json& tensors = j.at("tensors");
    for (size_t i = 0; i < n_models; ++i) {
      GhnModel model = GhnModel::init(c, 0);
      const std::string prefix = "model" + std::to_string(i) + ".";
      ParamSet params = model.params();
      for (const auto& [name, t] : params.entries()) {
        const std::string key = prefix + name;
        if (!tensors.contains(key)) throw ParseError("checkpoint missing tensor '" + key + "'");
        Tensor target = t;
        load_tensor_into(tensors.at(key), target, key);
      }
      ckpt.models.push_back(std::move(model));
    }
    for (const auto& [key, value] : tensors.items()) {
      if (key.rfind("opt.m.", 0) == 0) {
        const std::string name = key.substr(6);
        auto& mom = ckpt.opt.slots[name];
        mom.m = base64_to_doubles(value.at("data").get<std::string>());
        const std::string vkey = "opt.v." + name;
        if (!tensors.contains(vkey)) throw ParseError("checkpoint missing tensor '" + vkey + "'");
        mom.v = base64_to_doubles(tensors.at(vkey).at("data").get<std::string>());
      }
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what());
  }
}

}  // namespace ghn

#include "apnet/config.hpp"

#include <fstream>

namespace apnet {

using nlohmann::json;

void ExperimentConfig::validate() const {
  plan.validate();
  if (heap) heap->validate();
  if (optim.lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
  if (optim.momentum < 0.0 || optim.momentum >= 1.0)
    throw std::invalid_argument("config: momentum must be in [0, 1)");
  if (optim.weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (optim.schedule != "cosine" && optim.schedule != "constant")
    throw std::invalid_argument("config: unknown schedule '" + optim.schedule + "'");
  if (optim.epochs < 1 || optim.batch_size < 1) throw std::invalid_argument("config: bad epochs/batch_size");
  if (eval.resize_short < 1 || eval.crop < 1 || eval.crop > eval.resize_short)
    throw std::invalid_argument("config: eval crop must fit the resized short side");
  if (seeds.empty()) throw std::invalid_argument("config: seeds list must be non-empty");
  for (const PolicySpec& p : light) p.validate();
  for (const PolicySpec& p : graded) p.validate();
}

json policy_to_json(const PolicySpec& p) {
  json j;
  j["kind"] = policy_kind_name(p.kind);
  for (const auto& [k, v] : p.params) j[k] = v;
  return j;
}

PolicySpec policy_from_json(const json& j) {
  PolicySpec p;
  p.kind = policy_kind_from_name(j.at("kind").get<std::string>());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "kind" && it.key() != "level") p.params[it.key()] = it.value().get<double>();
  if (j.contains("level")) p.level = j["level"].get<int>();
  p.validate();
  return p;
}

json plan_to_json(const NetworkPlan& plan) {
  json stem{{"out_channels", plan.backbone.stem.out_channels},
            {"kernel", plan.backbone.stem.kernel},
            {"stride", plan.backbone.stem.stride},
            {"max_pool", plan.backbone.stem.max_pool}};
  json stages = json::array();
  for (const StageSpec& s : plan.backbone.stages)
    stages.push_back({{"block", block_type_name(s.block)},
                      {"blocks", s.blocks},
                      {"width", s.width},
                      {"stride", s.stride}});
  json j{{"input_channels", plan.backbone.input_channels},
         {"stem", stem},
         {"stages", stages},
         {"classes", plan.classes},
         {"pathways", plan.pathways}};
  if (!plan.replace_stages.empty()) j["replace_stages"] = plan.replace_stages;
  if (!plan.split.empty()) j["split"] = plan.split;
  return j;
}

NetworkPlan plan_from_json(const json& j) {
  NetworkPlan plan;
  plan.backbone.input_channels = j.value("input_channels", std::int64_t{3});
  const json& stem = j.at("stem");
  plan.backbone.stem.out_channels = stem.at("out_channels").get<std::int64_t>();
  plan.backbone.stem.kernel = stem.value("kernel", 3);
  plan.backbone.stem.stride = stem.value("stride", 1);
  plan.backbone.stem.max_pool = stem.value("max_pool", false);
  for (const json& s : j.at("stages")) {
    StageSpec stage;
    stage.block = block_type_from_name(s.value("block", std::string("basic")));
    stage.blocks = s.at("blocks").get<int>();
    stage.width = s.at("width").get<std::int64_t>();
    stage.stride = s.value("stride", 1);
    plan.backbone.stages.push_back(stage);
  }
  plan.classes = j.at("classes").get<std::int64_t>();
  plan.pathways = j.value("pathways", 1);
  if (j.contains("replace_stages")) plan.replace_stages = j["replace_stages"].get<std::vector<int>>();
  if (j.contains("split")) plan.split = j["split"].get<std::vector<double>>();
  plan.validate();
  return plan;
}

json heap_to_json(const HeAPStageSpec& spec) {
  json pathways = json::array();
  for (const HeAPPathwaySpec& p : spec.pathways)
    pathways.push_back({{"resolution", p.resolution}, {"width", p.width}, {"blocks", p.blocks}});
  return json{{"in_channels", spec.in_channels}, {"classes", spec.classes}, {"pathways", pathways}};
}

HeAPStageSpec heap_from_json(const json& j) {
  HeAPStageSpec spec;
  spec.in_channels = j.value("in_channels", std::int64_t{3});
  spec.classes = j.at("classes").get<std::int64_t>();
  for (const json& p : j.at("pathways")) {
    HeAPPathwaySpec path;
    path.resolution = p.at("resolution").get<std::int64_t>();
    path.width = p.at("width").get<std::int64_t>();
    path.blocks = p.value("blocks", 1);
    spec.pathways.push_back(path);
  }
  spec.validate();
  return spec;
}

json config_to_json(const ExperimentConfig& cfg) {
  json data{{"format", data_format_name(cfg.data.format)}};
  if (!cfg.data.path.empty()) data["path"] = cfg.data.path;
  if (cfg.data.format == DataFormat::Synth)
    data["synth"] = json{{"classes", cfg.data.synth.classes},
                         {"train_per_class", cfg.data.synth.train_per_class},
                         {"val_per_class", cfg.data.synth.val_per_class},
                         {"seed", cfg.data.synth.seed},
                         {"noise", cfg.data.synth.noise},
                         {"size", cfg.data.synth.size}};
  if (cfg.images_per_class > 0) data["images_per_class"] = cfg.images_per_class;

  json light = json::array(), graded = json::array();
  for (const PolicySpec& p : cfg.light) light.push_back(policy_to_json(p));
  for (const PolicySpec& p : cfg.graded) graded.push_back(policy_to_json(p));

  json j{{"label", cfg.label},
         {"data", data},
         {"model", plan_to_json(cfg.plan)},
         {"augment", json{{"light", light}, {"graded", graded}}},
         {"optim", json{{"lr", cfg.optim.lr},
                        {"momentum", cfg.optim.momentum},
                        {"weight_decay", cfg.optim.weight_decay},
                        {"schedule", cfg.optim.schedule},
                        {"epochs", cfg.optim.epochs},
                        {"batch_size", cfg.optim.batch_size},
                        {"similarity_weight", cfg.optim.similarity_weight},
                        {"label_smoothing", cfg.optim.label_smoothing}}},
         {"eval", json{{"resize", cfg.eval.resize_short}, {"crop", cfg.eval.crop}}},
         {"seeds", cfg.seeds}};
  if (cfg.heap) j["heap"] = heap_to_json(*cfg.heap);
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  cfg.label = j.value("label", std::string("run"));
  if (j.contains("data")) {
    const json& d = j["data"];
    cfg.data.format = data_format_from_name(d.value("format", std::string("synth")));
    cfg.data.path = d.value("path", std::string());
    cfg.images_per_class = d.value("images_per_class", std::int64_t{0});
    if (d.contains("synth")) {
      const json& s = d["synth"];
      cfg.data.synth.classes = s.value("classes", std::int64_t{10});
      cfg.data.synth.train_per_class = s.value("train_per_class", std::int64_t{200});
      cfg.data.synth.val_per_class = s.value("val_per_class", std::int64_t{50});
      cfg.data.synth.seed = s.value("seed", std::uint64_t{7});
      cfg.data.synth.noise = s.value("noise", 0.06);
      cfg.data.synth.size = s.value("size", std::int64_t{32});
    }
  }
  cfg.plan = plan_from_json(j.at("model"));
  if (j.contains("heap")) cfg.heap = heap_from_json(j["heap"]);
  if (j.contains("augment")) {
    const json& a = j["augment"];
    if (a.contains("light"))
      for (const json& p : a["light"]) cfg.light.push_back(policy_from_json(p));
    if (a.contains("graded"))
      for (const json& p : a["graded"]) cfg.graded.push_back(policy_from_json(p));
  }
  if (j.contains("optim")) {
    const json& o = j["optim"];
    cfg.optim.lr = o.value("lr", 0.1);
    cfg.optim.momentum = o.value("momentum", 0.9);
    cfg.optim.weight_decay = o.value("weight_decay", 1e-4);
    cfg.optim.schedule = o.value("schedule", std::string("cosine"));
    cfg.optim.epochs = o.value("epochs", 50);
    cfg.optim.batch_size = o.value("batch_size", 100);
    cfg.optim.similarity_weight = o.value("similarity_weight", -1.0);
    cfg.optim.label_smoothing = o.value("label_smoothing", 0.0);
  }
  if (j.contains("eval")) {
    cfg.eval.resize_short = j["eval"].value("resize", std::int64_t{32});
    cfg.eval.crop = j["eval"].value("crop", cfg.eval.resize_short);
  }
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config: " + file.string());
  json j;
  in >> j;
  return config_from_json(j);
}

}  // namespace apnet

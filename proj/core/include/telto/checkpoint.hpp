#pragma once

#include <cstdint>
#include <string>

#include "telto/framework.hpp"
#include "telto/synthetic.hpp"
#include "telto/topology.hpp"
#include "telto/train.hpp"

namespace telto {

/// Identity of a trained stage-1 model: architecture, statistics, and every
/// parameter value feed the hash.
template <typename T>
std::uint64_t stage1_fingerprint(const Stage1Model<T>& model);

template <typename T>
void save_stage1(const Stage1Model<T>& model, const std::string& path);
template <typename T>
Stage1Model<T> load_stage1(const std::string& path);

/// The framework checkpoint stores the stage-1 model by fingerprint only.
/// Loading requires the same topology (by hash) and, unless the model was
/// trained without stage-1 features, a stage-1 model with the recorded
/// fingerprint.
template <typename T>
void save_framework(const FrameworkModel<T>& model, const std::string& path);
template <typename T>
FrameworkModel<T> load_framework(const std::string& path, const Stage1Model<T>& stage1,
                                 const RoadTopology& topology);

/// JSON round-trips for the config structs. Parsers start from defaults and
/// apply the keys present, so partial documents act as overrides.
std::string backbone_config_json(const BackboneConfig& config);
BackboneConfig parse_backbone_config(const std::string& text);
std::string framework_config_json(const FrameworkConfig& config);
FrameworkConfig parse_framework_config(const std::string& text);
std::string train_config_json(const TrainConfig& config);
TrainConfig parse_train_config(const std::string& text);
std::string generator_config_json(const GeneratorConfig& config);
GeneratorConfig parse_generator_config(const std::string& text);

extern template std::uint64_t stage1_fingerprint<float>(const Stage1Model<float>&);
extern template std::uint64_t stage1_fingerprint<double>(const Stage1Model<double>&);
extern template void save_stage1<float>(const Stage1Model<float>&, const std::string&);
extern template void save_stage1<double>(const Stage1Model<double>&, const std::string&);
extern template Stage1Model<float> load_stage1<float>(const std::string&);
extern template Stage1Model<double> load_stage1<double>(const std::string&);
extern template void save_framework<float>(const FrameworkModel<float>&, const std::string&);
extern template void save_framework<double>(const FrameworkModel<double>&, const std::string&);
extern template FrameworkModel<float> load_framework<float>(const std::string&,
                                                            const Stage1Model<float>&,
                                                            const RoadTopology&);
extern template FrameworkModel<double> load_framework<double>(const std::string&,
                                                              const Stage1Model<double>&,
                                                              const RoadTopology&);

}  // namespace telto

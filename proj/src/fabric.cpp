#include "edif/fabric.hpp"

namespace edif {

Fabric::Fabric(const Clock& clock, FabricOptions options, std::vector<ApiToken> tokens, Executor executor)
    : store(options.store, clock),
      telemetry(clock, options.telemetry),
      scheduler(options.scheduler, store, &telemetry, clock, std::move(executor)),
      gateway(scheduler, store, telemetry, clock, std::move(tokens)) {}

ModelConfig config_for_model(const std::string& model_id) {
  ModelConfig config;
  config.model_id = model_id;
  // FNV-1a keeps the seed stable across runs and platforms.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : model_id) h = (h ^ c) * 0x100000001b3ull;
  config.seed = model_id == "toy" ? 0 : h;
  return config;
}

}  // namespace edif

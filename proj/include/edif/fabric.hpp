#pragma once

// Store, telemetry, scheduler and gateway wired together in one process.

#include <memory>
#include <string>
#include <vector>

#include "edif/clock.hpp"
#include "edif/gateway.hpp"
#include "edif/result_store.hpp"
#include "edif/scheduler.hpp"
#include "edif/telemetry.hpp"

namespace edif {

struct FabricOptions {
  SchedulerOptions scheduler;
  ResultStoreOptions store;
  TelemetryOptions telemetry;
};

class Fabric {
 public:
  Fabric(const Clock& clock, FabricOptions options, std::vector<ApiToken> tokens,
         Executor executor = default_executor());

  ResultStore store;
  Telemetry telemetry;
  Scheduler scheduler;
  Gateway gateway;
};

// Built-in model configs for manifest ids; unknown ids get the default toy
// architecture with a seed derived from the id.
ModelConfig config_for_model(const std::string& model_id);

}  // namespace edif

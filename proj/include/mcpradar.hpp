#pragma once

#include "mcpradar/error.hpp"
#include "mcpradar/task.hpp"
#include "mcpradar/answer_checker.hpp"
#include "mcpradar/mcp_pool.hpp"
#include "mcpradar/subprocess.hpp"
#include "mcpradar/mcp_client.hpp"
#include "mcpradar/llm_provider.hpp"
#include "mcpradar/openai_provider.hpp"
#include "mcpradar/agent.hpp"
#include "mcpradar/trace.hpp"
#include "mcpradar/metrics.hpp"
#include "mcpradar/report.hpp"
#include "mcpradar/runner.hpp"
#include "mcpradar/sim/calculator.hpp"
#include "mcpradar/sim/mock_server.hpp"
#include "mcpradar/sim/policy.hpp"
#include "mcpradar/sim/scenario.hpp"
#include "mcpradar/sim/synthetic.hpp"
#include "mcpradar/orchestrator.hpp"

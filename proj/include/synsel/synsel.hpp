#pragma once

#include "synsel/errors.hpp"
#include "synsel/numkit/matrix.hpp"
#include "synsel/numkit/rng.hpp"
#include "synsel/numkit/param.hpp"
#include "synsel/numkit/tape.hpp"
#include "synsel/numkit/grad_check.hpp"
#include "synsel/featurestore.hpp"
#include "synsel/controller.hpp"
#include "synsel/policy.hpp"
#include "synsel/evaluator.hpp"
#include "synsel/baselines.hpp"
#include "synsel/harness/task.hpp"
#include "synsel/harness/config.hpp"
#include "synsel/harness/experiment.hpp"
#include "synsel/harness/report.hpp"
#include "synsel/harness/verify.hpp"

#pragma once

// Few-shot class-incremental classification with calibrated class statistics.

#include "fscil/calibration.hpp"
#include "fscil/classifier.hpp"
#include "fscil/datastore.hpp"
#include "fscil/error.hpp"
#include "fscil/fecam.hpp"
#include "fscil/numerics.hpp"
#include "fscil/protocol.hpp"
#include "fscil/prototype.hpp"
#include "fscil/ranpac.hpp"
#include "fscil/rng.hpp"
#include "fscil/runner.hpp"
#include "fscil/synthgen.hpp"
#include "fscil/types.hpp"

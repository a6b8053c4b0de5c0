#pragma once

// Umbrella header for the whole relay-simulator library.

#include "aoip/audio.hpp"
#include "aoip/audit.hpp"
#include "aoip/clock.hpp"
#include "aoip/config.hpp"
#include "aoip/errors.hpp"
#include "aoip/evalkit.hpp"
#include "aoip/netem.hpp"
#include "aoip/orchestrator.hpp"
#include "aoip/provision.hpp"
#include "aoip/rng.hpp"
#include "aoip/session.hpp"
#include "aoip/storage.hpp"
#include "aoip/transport.hpp"
#include "aoip/util.hpp"

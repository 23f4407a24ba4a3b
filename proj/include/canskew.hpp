#pragma once

// Everything: simulator, attacks, fingerprinting, detection and file formats.
#include "canskew/attacks.hpp"
#include "canskew/bus.hpp"
#include "canskew/clock.hpp"
#include "canskew/detector.hpp"
#include "canskew/error.hpp"
#include "canskew/fingerprint.hpp"
#include "canskew/frame.hpp"
#include "canskew/pipeline.hpp"
#include "canskew/presets.hpp"
#include "canskew/report.hpp"
#include "canskew/scenario.hpp"
#include "canskew/scenario_io.hpp"
#include "canskew/text.hpp"
#include "canskew/trace_io.hpp"

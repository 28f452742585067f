#pragma once

#include "vtc/analyzer.hpp"
#include "vtc/config_json.hpp"
#include "vtc/error.hpp"
#include "vtc/layers.hpp"
#include "vtc/lvtc.hpp"
#include "vtc/pvtc.hpp"
#include "vtc/rng.hpp"
#include "vtc/rvtc.hpp"
#include "vtc/tensor.hpp"
#include "vtc/vtf.hpp"

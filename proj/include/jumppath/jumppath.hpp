#pragma once

#include "jumppath/committor.hpp"
#include "jumppath/doob.hpp"
#include "jumppath/errors.hpp"
#include "jumppath/finite_horizon.hpp"
#include "jumppath/model_io.hpp"
#include "jumppath/pair_field.hpp"
#include "jumppath/path_record.hpp"
#include "jumppath/path_sim.hpp"
#include "jumppath/pipeline.hpp"
#include "jumppath/rate_kernel.hpp"
#include "jumppath/rng.hpp"
#include "jumppath/state_set.hpp"
#include "jumppath/version.hpp"

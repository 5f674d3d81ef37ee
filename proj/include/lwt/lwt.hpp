// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lwt/autodiff.hpp"
#include "lwt/budget.hpp"
#include "lwt/config_file.hpp"
#include "lwt/config.hpp"
#include "lwt/grad_check.hpp"
#include "lwt/io.hpp"
#include "lwt/layers.hpp"
#include "lwt/model_check.hpp"
#include "lwt/ops.hpp"
#include "lwt/rng.hpp"
#include "lwt/tensor.hpp"
#include "lwt/toytrain.hpp"

#pragma once

#include "hsnn/checkpoint.hpp"
#include "hsnn/data.hpp"
#include "hsnn/energy.hpp"
#include "hsnn/hoyer.hpp"
#include "hsnn/network.hpp"
#include "hsnn/ops.hpp"
#include "hsnn/optimizer.hpp"
#include "hsnn/quantize.hpp"
#include "hsnn/spike.hpp"
#include "hsnn/tensor.hpp"

#pragma once

#include "sparsekit/container.hpp"
#include "sparsekit/curve.hpp"
#include "sparsekit/dtype.hpp"
#include "sparsekit/dynamics.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/filter.hpp"
#include "sparsekit/mask.hpp"
#include "sparsekit/mask_io.hpp"
#include "sparsekit/parallel.hpp"
#include "sparsekit/pruner.hpp"
#include "sparsekit/report.hpp"
#include "sparsekit/synth.hpp"
#include "sparsekit/text.hpp"

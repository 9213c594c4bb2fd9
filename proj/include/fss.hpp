#pragma once

#include "fss/common.hpp"
#include "fss/datamodel.hpp"
#include "fss/image_io.hpp"
#include "fss/resample.hpp"
#include "fss/datasets.hpp"
#include "fss/sampler.hpp"
#include "fss/metrics.hpp"
#include "fss/encoders.hpp"
#include "fss/adaptation.hpp"
#include "fss/trainer.hpp"
#include "fss/config.hpp"
#include "fss/runner.hpp"

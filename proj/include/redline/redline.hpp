#pragma once

#include "redline/accounting.hpp"
#include "redline/birthday.hpp"
#include "redline/bounds.hpp"
#include "redline/bundle.hpp"
#include "redline/error.hpp"
#include "redline/forward.hpp"
#include "redline/hashing.hpp"
#include "redline/merge.hpp"
#include "redline/model.hpp"
#include "redline/parallel.hpp"
#include "redline/pipeline.hpp"
#include "redline/rng.hpp"
#include "redline/split.hpp"

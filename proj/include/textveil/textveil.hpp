#pragma once

// Umbrella header. Pull in individual modules instead when compile time
// matters; remote.hpp is excluded here because it drags in the HTTP stack.

#include "textveil/catalog.hpp"
#include "textveil/cloak.hpp"
#include "textveil/error.hpp"
#include "textveil/harness.hpp"
#include "textveil/metrics.hpp"
#include "textveil/mia.hpp"
#include "textveil/optimize.hpp"
#include "textveil/perturb.hpp"
#include "textveil/rng.hpp"
#include "textveil/scorer.hpp"
#include "textveil/tokenizer.hpp"
#include "textveil/triggers.hpp"
#include "textveil/unicode.hpp"

#pragma once

// Everything except the HTTP pieces (remote.hpp, service.hpp), which pull in
// cpp-httplib.

#include "continuity/backends.hpp"
#include "continuity/chunker.hpp"
#include "continuity/core.hpp"
#include "continuity/dataset.hpp"
#include "continuity/engine.hpp"
#include "continuity/errors.hpp"
#include "continuity/generator.hpp"
#include "continuity/harness.hpp"
#include "continuity/ood.hpp"
#include "continuity/text.hpp"

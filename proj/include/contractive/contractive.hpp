#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"
#include "contractive/monitor.hpp"
#include "contractive/splitting.hpp"
#include "contractive/stability.hpp"
#include "contractive/steppers.hpp"
#include "contractive/system.hpp"
#include "contractive/tableau.hpp"

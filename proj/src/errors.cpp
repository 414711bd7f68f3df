#include "detco/errors.hpp"

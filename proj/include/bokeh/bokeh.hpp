#ifndef BOKEH_BOKEH_HPP
#define BOKEH_BOKEH_HPP

#include "bokeh/engine.hpp"

#endif // BOKEH_BOKEH_HPP

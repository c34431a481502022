#include <pybind11/pybind11.h>
PYBIND11_MODULE(_demonet, m) { m.doc() = "placeholder"; }

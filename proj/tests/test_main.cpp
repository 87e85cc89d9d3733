#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "gkd/tensor.hpp"

int main(int argc, char** argv)
{
    gkd::tune_allocator();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}

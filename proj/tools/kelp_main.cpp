#include "kelp/cli.hpp"

int main(int argc, char** argv)
{
    return kelp::run_cli(argc, argv);
}

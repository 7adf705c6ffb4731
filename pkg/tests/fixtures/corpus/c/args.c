#include <stdio.h>
#include <string.h>
#include <stdlib.h>

struct options {
    int verbose;
    int limit;
    const char *output;
};

static void usage(const char *prog) {
    fprintf(stderr, "usage: %s [-v] [-n limit] [-o file]\n", prog);
    exit(2);
}

static int parse_int(const char *text, int *out) {
    char *end = NULL;
    long value = strtol(text, &end, 10);
    if (end == text || *end != '\0') {
        return -1;
    }
    *out = (int)value;
    return 0;
}

int parse_options(int argc, char **argv, struct options *opts) {
    memset(opts, 0, sizeof(*opts));
    opts->limit = 10;
    for (int i = 1; i < argc; i++) {
        if (strcmp(argv[i], "-v") == 0) {
            opts->verbose = 1;
        } else if (strcmp(argv[i], "-n") == 0 && i + 1 < argc) {
            if (parse_int(argv[++i], &opts->limit) != 0) {
                usage(argv[0]);
            }
        } else if (strcmp(argv[i], "-o") == 0 && i + 1 < argc) {
            opts->output = argv[++i];
        } else {
            usage(argv[0]);
        }
    }
    return 0;
}

int main(int argc, char **argv) {
    struct options opts;
    parse_options(argc, argv, &opts);
    if (opts.verbose) {
        printf("limit=%d output=%s\n", opts.limit, opts.output ? opts.output : "-");
    }
    return 0;
}

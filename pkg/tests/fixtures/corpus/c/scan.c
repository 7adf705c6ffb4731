#include <stdio.h>
#include <ctype.h>

/* Tokenizer for a tiny config grammar.
 * Braces { } in this comment must not confuse anything.
 */

#define MAX_TOKEN 64
#define BRACE_PAIR "{}"

enum token_kind { TOK_WORD, TOK_OPEN, TOK_CLOSE, TOK_EOF };

static int is_word_char(int c) {
    return isalnum(c) || c == '_' || c == '-';
}

int next_token(FILE *fp, char *buf, enum token_kind *kind) {
    int c = fgetc(fp);
    while (c != EOF && isspace(c)) {
        c = fgetc(fp);
    }
    if (c == EOF) {
        *kind = TOK_EOF;
        return 0;
    }
    if (c == '{') {
        *kind = TOK_OPEN;
        buf[0] = '{';
        buf[1] = '\0';
        return 1;
    }
    if (c == '}') {
        *kind = TOK_CLOSE;
        buf[0] = '}';
        buf[1] = '\0';
        return 1;
    }
    int n = 0;
    while (c != EOF && is_word_char(c) && n < MAX_TOKEN - 1) {
        buf[n++] = (char)c; /* unmatched " quote in comment */
        c = fgetc(fp);
    }
    buf[n] = '\0';
    *kind = TOK_WORD;
    return n;
}

int count_braces(const char *text) {
    int depth = 0;
    for (const char *p = text; *p; p++) {
        if (*p == '{') {
            depth++;
        } else if (*p == '}') {
            depth--;
        }
    }
    return depth;
}

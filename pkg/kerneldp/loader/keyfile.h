/*
 * Bootstrap keystore text format, shared by mapctl and the test harness:
 * one record per line, `peerA peerB port policy keyhex64`, with blank
 * lines and `#` comments ignored. Selectors are canonicalized exactly as
 * the datapath builds them (numerically lower peer first; 0.0.0.0
 * wildcards at most one position).
 */
#ifndef MODSHIELD_KEYFILE_H
#define MODSHIELD_KEYFILE_H

#include <arpa/inet.h>
#include <stdio.h>
#include <string.h>

#include "../include/modshield_abi.h"

struct ms_key_entry {
    struct ms_key_sel sel;
    struct ms_key_val val;
};

static int ms_hex_nibble(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}

static int ms_parse_key_hex(const char *hex, uint8_t out[32])
{
    int i;

    if (strlen(hex) != 64)
        return -1;
    for (i = 0; i < 32; i++) {
        int hi = ms_hex_nibble(hex[2 * i]);
        int lo = ms_hex_nibble(hex[2 * i + 1]);

        if (hi < 0 || lo < 0)
            return -1;
        out[i] = (uint8_t)((hi << 4) | lo);
    }
    return 0;
}

/*
 * Parse `path` into `out` (at most `cap` records). Returns the record
 * count, or -1 with a message in errbuf.
 */
static int ms_keyfile_load(const char *path, struct ms_key_entry *out, int cap,
                           char *errbuf, size_t errlen)
{
    FILE *f = fopen(path, "r");
    char line[512];
    int count = 0;
    int lineno = 0;

    if (!f) {
        snprintf(errbuf, errlen, "cannot open %s", path);
        return -1;
    }
    while (fgets(line, sizeof(line), f)) {
        char peer_a[64], peer_b[64], policy[32], keyhex[160];
        struct in_addr ina, inb;
        unsigned port;
        int wildcards;
        struct ms_key_entry *e;

        lineno++;
        {
            char *p = line;

            while (*p == ' ' || *p == '\t')
                p++;
            if (*p == '\0' || *p == '\n' || *p == '#')
                continue;
        }
        if (sscanf(line, "%63s %63s %u %31s %159s",
                   peer_a, peer_b, &port, policy, keyhex) != 5) {
            snprintf(errbuf, errlen, "line %d: expected 5 fields", lineno);
            goto fail;
        }
        if (!inet_aton(peer_a, &ina) || !inet_aton(peer_b, &inb)) {
            snprintf(errbuf, errlen, "line %d: bad peer address", lineno);
            goto fail;
        }
        if (port == 0 || port > 65535) {
            snprintf(errbuf, errlen, "line %d: bad port %u", lineno, port);
            goto fail;
        }
        wildcards = (ina.s_addr == 0) + (inb.s_addr == 0);
        if (wildcards > 1) {
            snprintf(errbuf, errlen,
                     "line %d: at most one wildcard position allowed", lineno);
            goto fail;
        }
        if (count >= cap) {
            snprintf(errbuf, errlen, "more than %d records", cap);
            goto fail;
        }
        e = &out[count];
        memset(e, 0, sizeof(*e));
        if (ntohl(ina.s_addr) <= ntohl(inb.s_addr)) {
            e->sel.peer_a = ina.s_addr;
            e->sel.peer_b = inb.s_addr;
        } else {
            e->sel.peer_a = inb.s_addr;
            e->sel.peer_b = ina.s_addr;
        }
        e->sel.server_port = (uint16_t)port;
        e->sel.pad = 0;
        if (strcmp(policy, "strict") == 0) {
            e->val.policy = MS_POLICY_STRICT;
        } else if (strcmp(policy, "permissive") == 0) {
            e->val.policy = MS_POLICY_PERMISSIVE;
        } else {
            snprintf(errbuf, errlen, "line %d: bad policy '%s'", lineno, policy);
            goto fail;
        }
        if (ms_parse_key_hex(keyhex, e->val.key) != 0) {
            snprintf(errbuf, errlen, "line %d: key must be 64 hex chars", lineno);
            goto fail;
        }
        count++;
    }
    fclose(f);
    return count;
fail:
    fclose(f);
    return -1;
}

#endif /* MODSHIELD_KEYFILE_H */
